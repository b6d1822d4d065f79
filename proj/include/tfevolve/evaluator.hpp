#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tfevolve/genome.hpp"
#include "tfevolve/image.hpp"

namespace tfevolve {

enum class AspectId { information_richness, feature_discrimination, color_harmony, text_intent, visual_intent };

const char* to_string(AspectId id);
AspectId parse_aspect_id(const std::string& name);

struct Aspect {
  AspectId id;
  double weight = 1.0;
  std::string prompt_text;
};

inline constexpr double kFormalAspectWeight = 1.0;
inline constexpr double kIntentAspectWeight = 3.0;

Aspect make_aspect(AspectId id, double weight);
std::vector<Aspect> formal_aspects();

// Throws bad_request on an empty set, duplicate ids or non-positive weights.
void validate(std::span<const Aspect> aspects);

enum class IntentKind { none, text, image };

struct Intent {
  IntentKind kind = IntentKind::none;
  std::string text;
  std::optional<RenderedImage> reference;
};

void validate(const Intent& intent);

// Formal aspects, plus the intent aspects an active intent calls for.
std::vector<Aspect> aspects_for(const Intent& intent, bool include_intent);

enum class Winner { A, B, Tie };

const char* to_string(Winner w);

struct ComparisonResult {
  std::map<AspectId, Winner> per_aspect;
  Winner overall = Winner::Tie;
  std::string rationale;
  bool degraded = false;
};

// Weighted vote: each aspect adds its weight to its winner, a tie splits it
// evenly; overall is Tie iff the two sums are equal.
Winner aggregate(const std::map<AspectId, Winner>& per_aspect, std::span<const Aspect> aspects);

class Judge {
 public:
  virtual ~Judge() = default;
  virtual ComparisonResult compare(const RenderedImage& a, const RenderedImage& b, std::span<const Aspect> aspects,
                                   const Intent& intent) = 0;
  // Deterministic judges may be called from any number of threads.
  virtual bool concurrent() const { return false; }
  virtual std::string name() const = 0;
};

// Checks preconditions shared by every backend.
void check_comparable(const RenderedImage& a, const RenderedImage& b, std::span<const Aspect> aspects);

struct HeuristicOptions {
  Rgb background{0.1, 0.1, 0.1};  // pixels of exactly this colour count as empty
  double tie_threshold = 0.01;
};

double heuristic_score(const RenderedImage& image, AspectId aspect, const Intent& intent,
                       const HeuristicOptions& options = {});

// Equal-weight mean of the three formal aspect scores.
double composite_score(const RenderedImage& image, const HeuristicOptions& options = {});

// Deterministic offline judge built on heuristic_score.
class HeuristicJudge : public Judge {
 public:
  explicit HeuristicJudge(HeuristicOptions options = {}) : options_(options) {}
  ComparisonResult compare(const RenderedImage& a, const RenderedImage& b, std::span<const Aspect> aspects,
                           const Intent& intent) override;
  bool concurrent() const override { return true; }
  std::string name() const override { return "heuristic"; }

 private:
  HeuristicOptions options_;
};

}  // namespace tfevolve
