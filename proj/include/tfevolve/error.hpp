#pragma once

#include <stdexcept>
#include <string>

namespace tfevolve {

// Closed set of failure categories; maps 1:1 onto the HTTP API error codes.
enum class ErrorCode { bad_request, not_found, conflict, judge_unavailable, internal };

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string detail = {})
      : std::runtime_error(message), code_(code), detail_(std::move(detail)) {}

  ErrorCode code() const { return code_; }
  const std::string& detail() const { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

inline Error bad_request(const std::string& message, std::string detail = {}) {
  return Error(ErrorCode::bad_request, message, std::move(detail));
}

inline Error not_found(const std::string& message, std::string detail = {}) {
  return Error(ErrorCode::not_found, message, std::move(detail));
}

}  // namespace tfevolve
