#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "kdiff/conditioning.hpp"
#include "kdiff/trainer.hpp"

namespace kdiff {

enum class ShapeKind : std::uint8_t { Square, Circle, Triangle };
enum class Color : std::uint8_t { Red, Green, Blue, Yellow };

inline constexpr std::size_t kShapeKinds = 3;
inline constexpr std::size_t kColors = 4;
/// Cells of the 2x2 layout grid, row-major from the top left.
inline constexpr int kCells = 4;

std::string_view to_string(ShapeKind s);
std::string_view to_string(Color c);
ShapeKind parse_shape(std::string_view name);
Color parse_color(std::string_view name);
/// RGB in [-1, 1].
std::array<double, 3> color_rgb(Color c);
inline constexpr std::array<double, 3> kBackground = {-1.0, -1.0, -1.0};

struct SceneObject {
  ShapeKind shape;
  Color color;
  int cell;
  friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

struct SceneSpec {
  std::vector<SceneObject> objects;
  std::vector<std::string> caption;
  std::vector<PosTag> tags;
  std::vector<std::string> synthetic_caption;
  std::vector<PosTag> synthetic_tags;
  std::vector<RegionMask> masks;  // one per object, in object order
};

struct SceneOptions {
  std::size_t height = 32;
  std::size_t width = 32;
  int min_objects = 1;
  int max_objects = 3;
  /// Probability that a multi-object caption leaves one object unmentioned.
  double omit_prob = 0.3;
};

/// Random scene: object count uniform in [min, max], distinct cells, shape and
/// colour uniform. Captions and masks are derived from the objects.
SceneSpec random_scene(const SceneOptions& options, Rng& rng);

/// Fills in captions and masks for a hand-built object list. `omitted` names
/// an object index left out of the original caption, or -1.
SceneSpec describe_scene(std::vector<SceneObject> objects, std::size_t height, std::size_t width, int omitted = -1);

/// Caption used as an inference prompt: every object, original phrasing.
std::vector<std::string> prompt_words(const SceneSpec& spec);

RegionMask object_mask(const SceneObject& object, std::size_t height, std::size_t width);
/// Fraction of a cell's pixels covered by the shape at this resolution.
double shape_fill_fraction(ShapeKind shape, std::size_t height, std::size_t width);

/// [h, w, 3] image: background everywhere except the objects' masks.
Tensor render_scene(const SceneSpec& spec, std::size_t height, std::size_t width);

struct SceneSample {
  Tensor image;
  SceneSpec spec;
};

/// Sample i is drawn from its own stream derive_seed(seed, i).
std::vector<SceneSample> generate_dataset(std::size_t count, std::uint64_t seed, const SceneOptions& options);

TrainingExample to_training_example(const SceneSample& sample);
std::vector<TrainingExample> to_training_examples(const std::vector<SceneSample>& samples);

/// Writes manifest.json (specs, captions, tags, run-length masks, offsets)
/// and images.f32 (little-endian float32, concatenated) under `dir`.
void save_dataset(const std::filesystem::path& dir, const std::vector<SceneSample>& samples, const SceneOptions& options);
std::vector<SceneSample> load_dataset(const std::filesystem::path& dir);

/// Alternating run lengths starting with a (possibly empty) run of zeros.
std::vector<std::uint32_t> mask_to_runs(const RegionMask& mask);
RegionMask mask_from_runs(const std::vector<std::uint32_t>& runs, std::size_t height, std::size_t width);

}  // namespace kdiff
