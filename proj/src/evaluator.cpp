#include "tfevolve/evaluator.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>

#include "tfevolve/error.hpp"
#include "tfevolve/kernels/color.hpp"

namespace tfevolve {

const char* to_string(AspectId id) {
  switch (id) {
    case AspectId::information_richness: return "information_richness";
    case AspectId::feature_discrimination: return "feature_discrimination";
    case AspectId::color_harmony: return "color_harmony";
    case AspectId::text_intent: return "text_intent";
    case AspectId::visual_intent: return "visual_intent";
  }
  return "information_richness";
}

AspectId parse_aspect_id(const std::string& name) {
  for (AspectId id : {AspectId::information_richness, AspectId::feature_discrimination, AspectId::color_harmony,
                      AspectId::text_intent, AspectId::visual_intent}) {
    if (name == to_string(id)) return id;
  }
  throw bad_request("unknown aspect: " + name);
}

const char* to_string(Winner w) {
  switch (w) {
    case Winner::A: return "A";
    case Winner::B: return "B";
    case Winner::Tie: return "Tie";
  }
  return "Tie";
}

Aspect make_aspect(AspectId id, double weight) {
  Aspect a{id, weight, {}};
  switch (id) {
    case AspectId::information_richness:
      a.prompt_text =
          "Which image shows more meaningful structure of the data while keeping noise and irrelevant "
          "material out of the way?";
      break;
    case AspectId::feature_discrimination:
      a.prompt_text =
          "In which image are the different structures of the volume easier to tell apart from one another?";
      break;
    case AspectId::color_harmony:
      a.prompt_text = "Which image uses a more pleasing and coherent colour scheme for its content?";
      break;
    case AspectId::text_intent:
      a.prompt_text =
          "Which image better matches the user's written request, while still being a good rendering overall?";
      break;
    case AspectId::visual_intent:
      a.prompt_text =
          "Which image better matches the reference image, both in colour style and in which structures it "
          "emphasizes?";
      break;
  }
  return a;
}

std::vector<Aspect> formal_aspects() {
  return {make_aspect(AspectId::information_richness, kFormalAspectWeight),
          make_aspect(AspectId::feature_discrimination, kFormalAspectWeight),
          make_aspect(AspectId::color_harmony, kFormalAspectWeight)};
}

void validate(std::span<const Aspect> aspects) {
  if (aspects.empty()) throw bad_request("aspect list is empty");
  std::set<AspectId> seen;
  for (const Aspect& a : aspects) {
    if (!(a.weight > 0.0)) throw bad_request("aspect weight must be positive");
    if (!seen.insert(a.id).second) throw bad_request(std::string("duplicate aspect: ") + to_string(a.id));
  }
}

void validate(const Intent& intent) {
  if (intent.kind == IntentKind::text && intent.text.empty()) throw bad_request("text intent needs text");
  if (intent.kind == IntentKind::image && !intent.reference) throw bad_request("image intent needs a reference");
}

std::vector<Aspect> aspects_for(const Intent& intent, bool include_intent) {
  std::vector<Aspect> aspects = formal_aspects();
  if (!include_intent) return aspects;
  if (!intent.text.empty()) aspects.push_back(make_aspect(AspectId::text_intent, kIntentAspectWeight));
  if (intent.reference) aspects.push_back(make_aspect(AspectId::visual_intent, kIntentAspectWeight));
  return aspects;
}

Winner aggregate(const std::map<AspectId, Winner>& per_aspect, std::span<const Aspect> aspects) {
  double a = 0.0;
  double b = 0.0;
  for (const Aspect& aspect : aspects) {
    const auto it = per_aspect.find(aspect.id);
    if (it == per_aspect.end()) continue;
    switch (it->second) {
      case Winner::A: a += aspect.weight; break;
      case Winner::B: b += aspect.weight; break;
      case Winner::Tie:
        a += 0.5 * aspect.weight;
        b += 0.5 * aspect.weight;
        break;
    }
  }
  if (a > b) return Winner::A;
  if (b > a) return Winner::B;
  return Winner::Tie;
}

void check_comparable(const RenderedImage& a, const RenderedImage& b, std::span<const Aspect> aspects) {
  if (a.width != b.width || a.height != b.height) throw bad_request("compared images differ in size");
  validate(aspects);
}

namespace {

constexpr int kLumaBins = 64;
constexpr int kHueBins = 36;
constexpr float kMinSaturation = 0.2f;
constexpr float kMinValue = 0.1f;

struct ColorFeatures {
  std::vector<float> hue, saturation, value, luma;
  std::vector<char> foreground;
  std::size_t foreground_count = 0;
};

ColorFeatures analyze(const RenderedImage& image, const Rgb& background) {
  ColorFeatures f;
  const std::size_t n = image.pixel_count();
  f.hue.resize(n);
  f.saturation.resize(n);
  f.value.resize(n);
  f.luma.resize(n);
  kernels::rgba_to_hsvl(image.pixels.data(), n, {f.hue.data(), f.saturation.data(), f.value.data(), f.luma.data()});
  std::array<std::uint8_t, 3> bg{};
  for (int c = 0; c < 3; ++c) {
    bg[static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(std::lround(std::clamp(background[c], 0.0, 1.0) * 255.0));
  }
  f.foreground.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* px = image.pixels.data() + 4 * i;
    const bool fg = px[0] != bg[0] || px[1] != bg[1] || px[2] != bg[2];
    f.foreground[i] = fg;
    f.foreground_count += fg;
  }
  return f;
}

bool saturated(const ColorFeatures& f, std::size_t i) {
  return f.foreground[i] && f.saturation[i] > kMinSaturation && f.value[i] > kMinValue;
}

int hue_bin(float hue) { return std::clamp(static_cast<int>(hue / (360.0f / kHueBins)), 0, kHueBins - 1); }

double information_richness(const ColorFeatures& f) {
  if (f.foreground_count == 0) return 0.0;
  std::array<std::size_t, kLumaBins> counts{};
  for (std::size_t i = 0; i < f.luma.size(); ++i) {
    if (!f.foreground[i]) continue;
    ++counts[static_cast<std::size_t>(std::clamp(static_cast<int>(f.luma[i] * kLumaBins), 0, kLumaBins - 1))];
  }
  double entropy = 0.0;
  const double total = static_cast<double>(f.foreground_count);
  for (std::size_t c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / total;
    entropy -= p * std::log(p);
  }
  return entropy / std::log(static_cast<double>(kLumaBins));
}

std::array<std::size_t, kHueBins> hue_histogram(const ColorFeatures& f, std::size_t& total) {
  std::array<std::size_t, kHueBins> counts{};
  total = 0;
  for (std::size_t i = 0; i < f.hue.size(); ++i) {
    if (!saturated(f, i)) continue;
    ++counts[static_cast<std::size_t>(hue_bin(f.hue[i]))];
    ++total;
  }
  return counts;
}

double feature_discrimination(const ColorFeatures& f) {
  std::size_t total = 0;
  const auto counts = hue_histogram(f, total);
  if (total == 0) return 0.0;
  double mean = 0.0;
  for (std::size_t c : counts) mean += static_cast<double>(c);
  mean /= kHueBins;
  double var = 0.0;
  for (std::size_t c : counts) var += (static_cast<double>(c) - mean) * (static_cast<double>(c) - mean);
  const double threshold = mean + std::sqrt(var / kHueBins);
  int peaks = 0;
  for (int i = 0; i < kHueBins; ++i) {
    const auto c = static_cast<double>(counts[static_cast<std::size_t>(i)]);
    const auto left = static_cast<double>(counts[static_cast<std::size_t>((i + kHueBins - 1) % kHueBins)]);
    const auto right = static_cast<double>(counts[static_cast<std::size_t>((i + 1) % kHueBins)]);
    // Strict on the left, inclusive on the right: a plateau counts once.
    if (c > left && c >= right && c > threshold) ++peaks;
  }
  return std::min(peaks, 6) / 6.0;
}

double circular_distance(double a, double b) {
  const double d = std::fmod(std::fabs(a - b), 360.0);
  return d > 180.0 ? 360.0 - d : d;
}

double color_harmony(const ColorFeatures& f) {
  std::size_t total = 0;
  const auto counts = hue_histogram(f, total);
  if (total == 0) return 0.0;
  const auto dominant_bin = std::max_element(counts.begin(), counts.end()) - counts.begin();
  const double hub = (static_cast<double>(dominant_bin) + 0.5) * (360.0 / kHueBins);
  double sum = 0.0;
  for (std::size_t i = 0; i < f.hue.size(); ++i) {
    if (!saturated(f, i)) continue;
    sum += std::min(circular_distance(f.hue[i], hub), circular_distance(f.hue[i], hub + 180.0));
  }
  return std::clamp(1.0 - (sum / static_cast<double>(total)) / 90.0, 0.0, 1.0);
}

// 8 x 8 x 4 HSV histogram over foreground pixels (all pixels if none),
// normalized to unit mass.
std::vector<double> hsv_histogram(const ColorFeatures& f) {
  std::vector<double> hist(8 * 8 * 4, 0.0);
  const bool use_all = f.foreground_count == 0;
  double total = 0.0;
  for (std::size_t i = 0; i < f.hue.size(); ++i) {
    if (!use_all && !f.foreground[i]) continue;
    const int h = std::clamp(static_cast<int>(f.hue[i] / 45.0f), 0, 7);
    const int s = std::clamp(static_cast<int>(f.saturation[i] * 8.0f), 0, 7);
    const int v = std::clamp(static_cast<int>(f.value[i] * 4.0f), 0, 3);
    hist[static_cast<std::size_t>((h * 8 + s) * 4 + v)] += 1.0;
    total += 1.0;
  }
  if (total > 0.0) {
    for (double& x : hist) x /= total;
  }
  return hist;
}

double visual_intent(const ColorFeatures& f, const ColorFeatures& reference) {
  const auto a = hsv_histogram(f);
  const auto b = hsv_histogram(reference);
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += std::min(a[i], b[i]);
  return std::clamp(sum, 0.0, 1.0);
}

double score_features(const ColorFeatures& f, AspectId aspect, const ColorFeatures* reference) {
  switch (aspect) {
    case AspectId::information_richness: return information_richness(f);
    case AspectId::feature_discrimination: return feature_discrimination(f);
    case AspectId::color_harmony: return color_harmony(f);
    case AspectId::text_intent: return 0.5;
    case AspectId::visual_intent:
      if (reference == nullptr) throw bad_request("visual_intent needs a reference image");
      return visual_intent(f, *reference);
  }
  return 0.0;
}

}  // namespace

double heuristic_score(const RenderedImage& image, AspectId aspect, const Intent& intent,
                       const HeuristicOptions& options) {
  if (aspect == AspectId::visual_intent && !intent.reference) {
    throw bad_request("visual_intent needs a reference image");
  }
  const ColorFeatures f = analyze(image, options.background);
  std::optional<ColorFeatures> reference;
  if (aspect == AspectId::visual_intent) reference = analyze(*intent.reference, options.background);
  return score_features(f, aspect, reference ? &*reference : nullptr);
}

double composite_score(const RenderedImage& image, const HeuristicOptions& options) {
  const ColorFeatures f = analyze(image, options.background);
  return (information_richness(f) + feature_discrimination(f) + color_harmony(f)) / 3.0;
}

ComparisonResult HeuristicJudge::compare(const RenderedImage& a, const RenderedImage& b,
                                         std::span<const Aspect> aspects, const Intent& intent) {
  check_comparable(a, b, aspects);
  const ColorFeatures fa = analyze(a, options_.background);
  const ColorFeatures fb = analyze(b, options_.background);
  std::optional<ColorFeatures> reference;
  const bool wants_reference = std::any_of(aspects.begin(), aspects.end(),
                                           [](const Aspect& x) { return x.id == AspectId::visual_intent; });
  if (wants_reference) {
    if (!intent.reference) throw bad_request("visual_intent needs a reference image");
    reference = analyze(*intent.reference, options_.background);
  }

  ComparisonResult result;
  for (const Aspect& aspect : aspects) {
    const double sa = score_features(fa, aspect.id, reference ? &*reference : nullptr);
    const double sb = score_features(fb, aspect.id, reference ? &*reference : nullptr);
    const double diff = sa - sb;
    Winner w = Winner::Tie;
    if (std::fabs(diff) >= options_.tie_threshold) w = diff > 0.0 ? Winner::A : Winner::B;
    result.per_aspect[aspect.id] = w;
  }
  result.overall = aggregate(result.per_aspect, aspects);
  return result;
}

}  // namespace tfevolve
