#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "tfevolve/error.hpp"
#include "tfevolve/evaluator.hpp"
#include "tfevolve/mllm.hpp"
#include "tfevolve/orchestrator.hpp"

namespace tfevolve {

struct ServiceConfig {
  std::filesystem::path data_dir = "tfevolve-data";
  std::string judge = "heuristic";  // heuristic | mllm
  MllmConfig mllm;
  // Used instead of constructing a judge from `judge` / `mllm` (tests).
  std::shared_ptr<Judge> judge_instance;
  SessionOptions session_options;
};

// data_dir from TFEVOLVE_DATA_DIR and the MLLM settings from the environment.
ServiceConfig service_config_from_env();

int http_status(ErrorCode code);

class Service {
 public:
  explicit Service(ServiceConfig config);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Blocking.
  bool listen(const std::string& host, int port);
  // Binds an ephemeral port and returns it; follow with listen_after_bind().
  int bind_any_port(const std::string& host);
  bool listen_after_bind();
  void wait_until_ready();
  void stop();

  // Blocks until no session has a step in flight.
  void wait_idle();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace tfevolve
