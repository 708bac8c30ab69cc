#include "kdiff/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "kdiff/error.hpp"

namespace kdiff {
namespace {

constexpr std::array<std::string_view, kShapeKinds> kShapeNames = {"square", "circle", "triangle"};
constexpr std::array<std::string_view, kColors> kColorNames = {"red", "green", "blue", "yellow"};
constexpr std::array<std::string_view, 5> kNumerals = {"zero", "one", "two", "three", "four"};

struct CellBox {
  std::size_t top, left, size_h, size_w;
};

CellBox cell_box(int cell, std::size_t height, std::size_t width) {
  const std::size_t ch = height / 2, cw = width / 2;
  return {static_cast<std::size_t>(cell / 2) * ch, static_cast<std::size_t>(cell % 2) * cw, ch, cw};
}

// Whether pixel (y, x) relative to the cell's top-left lies in the shape.
bool inside_shape(ShapeKind shape, std::size_t y, std::size_t x, std::size_t ch, std::size_t cw) {
  const double margin_h = static_cast<double>(ch) / 8.0;
  const double margin_w = static_cast<double>(cw) / 8.0;
  const double py = static_cast<double>(y) + 0.5;
  const double px = static_cast<double>(x) + 0.5;
  const double top = margin_h, bottom = static_cast<double>(ch) - margin_h;
  const double left = margin_w, right = static_cast<double>(cw) - margin_w;
  if (py < top || py > bottom || px < left || px > right) return false;
  const double cy = 0.5 * (top + bottom), cx = 0.5 * (left + right);
  const double ry = 0.5 * (bottom - top), rx = 0.5 * (right - left);
  switch (shape) {
    case ShapeKind::Square:
      return true;
    case ShapeKind::Circle: {
      const double dy = (py - cy) / ry, dx = (px - cx) / rx;
      return dy * dy + dx * dx <= 1.0;
    }
    case ShapeKind::Triangle: {
      // Apex at the top centre, base along the bottom edge.
      const double depth = (py - top) / (bottom - top);
      return std::abs(px - cx) <= depth * rx;
    }
  }
  return false;
}

void append_phrase(std::vector<std::string>& words, std::vector<PosTag>& tags, const SceneObject& o,
                   bool article_and_preposition) {
  auto push = [&](std::string_view w, PosTag t) {
    words.emplace_back(w);
    tags.push_back(t);
  };
  if (article_and_preposition) push("a", PosTag::Function);
  push(to_string(o.color), PosTag::Adjective);
  push(to_string(o.shape), PosTag::Noun);
  if (article_and_preposition) push("at", PosTag::Function);
  push(o.cell < 2 ? "top" : "bottom", PosTag::Noun);
  push(o.cell % 2 == 0 ? "left" : "right", PosTag::Noun);
}

}  // namespace

std::string_view to_string(ShapeKind s) { return kShapeNames[static_cast<std::size_t>(s)]; }
std::string_view to_string(Color c) { return kColorNames[static_cast<std::size_t>(c)]; }

ShapeKind parse_shape(std::string_view name) {
  for (std::size_t i = 0; i < kShapeKinds; ++i) {
    if (kShapeNames[i] == name) return static_cast<ShapeKind>(i);
  }
  fail(ErrorKind::DataError, "unknown shape '" + std::string(name) + "'");
}

Color parse_color(std::string_view name) {
  for (std::size_t i = 0; i < kColors; ++i) {
    if (kColorNames[i] == name) return static_cast<Color>(i);
  }
  fail(ErrorKind::DataError, "unknown colour '" + std::string(name) + "'");
}

std::array<double, 3> color_rgb(Color c) {
  switch (c) {
    case Color::Red: return {1.0, -1.0, -1.0};
    case Color::Green: return {-1.0, 1.0, -1.0};
    case Color::Blue: return {-1.0, -1.0, 1.0};
    case Color::Yellow: return {1.0, 1.0, -1.0};
  }
  return kBackground;
}

RegionMask object_mask(const SceneObject& object, std::size_t height, std::size_t width) {
  RegionMask m{height, width, std::vector<std::uint8_t>(height * width, 0)};
  const CellBox box = cell_box(object.cell, height, width);
  for (std::size_t y = 0; y < box.size_h; ++y) {
    for (std::size_t x = 0; x < box.size_w; ++x) {
      if (inside_shape(object.shape, y, x, box.size_h, box.size_w)) {
        m.cells[(box.top + y) * width + box.left + x] = 1;
      }
    }
  }
  return m;
}

double shape_fill_fraction(ShapeKind shape, std::size_t height, std::size_t width) {
  const RegionMask m = object_mask({shape, Color::Red, 0}, height, width);
  const auto covered = std::count(m.cells.begin(), m.cells.end(), std::uint8_t{1});
  return static_cast<double>(covered) / static_cast<double>((height / 2) * (width / 2));
}

SceneSpec describe_scene(std::vector<SceneObject> objects, std::size_t height, std::size_t width, int omitted) {
  if (objects.empty() || objects.size() > static_cast<std::size_t>(kCells)) {
    fail(ErrorKind::DataError, "a scene holds 1 to 4 objects");
  }
  std::vector<bool> used(kCells, false);
  for (const auto& o : objects) {
    if (o.cell < 0 || o.cell >= kCells || used[o.cell]) fail(ErrorKind::DataError, "objects need distinct cells");
    used[o.cell] = true;
  }
  SceneSpec s;
  s.objects = std::move(objects);
  bool first = true;
  for (std::size_t i = 0; i < s.objects.size(); ++i) {
    if (static_cast<int>(i) == omitted) continue;
    if (!first) {
      s.caption.emplace_back("and");
      s.tags.push_back(PosTag::Function);
    }
    append_phrase(s.caption, s.tags, s.objects[i], true);
    first = false;
  }
  // Synthetic caption: count, then objects in cell order.
  std::vector<SceneObject> by_cell = s.objects;
  std::sort(by_cell.begin(), by_cell.end(), [](const auto& a, const auto& b) { return a.cell < b.cell; });
  s.synthetic_caption.emplace_back(kNumerals[by_cell.size()]);
  s.synthetic_tags.push_back(PosTag::Numeral);
  s.synthetic_caption.emplace_back(by_cell.size() == 1 ? "shape" : "shapes");
  s.synthetic_tags.push_back(PosTag::Noun);
  for (std::size_t i = 0; i < by_cell.size(); ++i) {
    if (i) {
      s.synthetic_caption.emplace_back("and");
      s.synthetic_tags.push_back(PosTag::Function);
    }
    append_phrase(s.synthetic_caption, s.synthetic_tags, by_cell[i], false);
  }
  for (const auto& o : s.objects) s.masks.push_back(object_mask(o, height, width));
  return s;
}

SceneSpec random_scene(const SceneOptions& options, Rng& rng) {
  const int count = rng.uniform_int(options.min_objects, options.max_objects);
  std::array<int, kCells> cells{0, 1, 2, 3};
  for (int i = kCells - 1; i > 0; --i) std::swap(cells[i], cells[rng.uniform_int(0, i)]);
  std::vector<SceneObject> objects;
  for (int i = 0; i < count; ++i) {
    const auto shape = static_cast<ShapeKind>(rng.uniform_int(0, static_cast<int>(kShapeKinds) - 1));
    const auto color = static_cast<Color>(rng.uniform_int(0, static_cast<int>(kColors) - 1));
    objects.push_back({shape, color, cells[i]});
  }
  int omitted = -1;
  const bool omit = rng.bernoulli(options.omit_prob);
  const int which = rng.uniform_int(0, count - 1);
  if (count >= 2 && omit) omitted = which;
  return describe_scene(std::move(objects), options.height, options.width, omitted);
}

std::vector<std::string> prompt_words(const SceneSpec& spec) {
  return describe_scene(spec.objects, spec.masks.empty() ? 2 : spec.masks[0].height,
                        spec.masks.empty() ? 2 : spec.masks[0].width)
      .caption;
}

Tensor render_scene(const SceneSpec& spec, std::size_t height, std::size_t width) {
  Tensor img({height, width, 3});
  for (std::size_t i = 0; i < height * width; ++i) {
    for (std::size_t c = 0; c < 3; ++c) img[i * 3 + c] = kBackground[c];
  }
  for (const auto& o : spec.objects) {
    const RegionMask m = object_mask(o, height, width);
    const auto rgb = color_rgb(o.color);
    for (std::size_t i = 0; i < height * width; ++i) {
      if (!m.cells[i]) continue;
      for (std::size_t c = 0; c < 3; ++c) img[i * 3 + c] = rgb[c];
    }
  }
  return img;
}

std::vector<SceneSample> generate_dataset(std::size_t count, std::uint64_t seed, const SceneOptions& options) {
  if (count < 1) fail(ErrorKind::DataError, "dataset count must be >= 1");
  if (options.height % 2 || options.width % 2 || options.height < 4 || options.width < 4) {
    fail(ErrorKind::DataError, "scene resolution must be even and at least 4");
  }
  if (options.min_objects < 1 || options.max_objects > kCells || options.min_objects > options.max_objects) {
    fail(ErrorKind::DataError, "object counts must satisfy 1 <= min <= max <= 4");
  }
  std::vector<SceneSample> out(count);
  const auto n = static_cast<long>(count);
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    SceneSpec spec = random_scene(options, rng);
    out[i].image = render_scene(spec, options.height, options.width);
    out[i].spec = std::move(spec);
  }
  return out;
}

TrainingExample to_training_example(const SceneSample& sample) {
  TrainingExample ex;
  ex.image = sample.image;
  ex.caption.words = sample.spec.caption;
  ex.caption.tags = sample.spec.tags;
  ex.caption.synthetic_words = sample.spec.synthetic_caption;
  ex.caption.synthetic_tags = sample.spec.synthetic_tags;
  for (const auto& o : sample.spec.objects) ex.caption.object_labels.emplace_back(to_string(o.shape));
  ex.caption.object_masks = sample.spec.masks;
  return ex;
}

std::vector<TrainingExample> to_training_examples(const std::vector<SceneSample>& samples) {
  std::vector<TrainingExample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(to_training_example(s));
  return out;
}

std::vector<std::uint32_t> mask_to_runs(const RegionMask& mask) {
  std::vector<std::uint32_t> runs;
  std::uint8_t current = 0;
  std::uint32_t length = 0;
  for (auto c : mask.cells) {
    const std::uint8_t bit = c ? 1 : 0;
    if (bit != current) {
      runs.push_back(length);
      current = bit;
      length = 0;
    }
    ++length;
  }
  runs.push_back(length);
  return runs;
}

RegionMask mask_from_runs(const std::vector<std::uint32_t>& runs, std::size_t height, std::size_t width) {
  RegionMask m{height, width, {}};
  m.cells.reserve(height * width);
  std::uint8_t bit = 0;
  for (auto r : runs) {
    m.cells.insert(m.cells.end(), r, bit);
    bit ^= 1;
  }
  if (m.cells.size() != height * width) fail(ErrorKind::DataError, "mask runs do not cover the grid");
  return m;
}

namespace {
std::vector<std::string> tag_names(const std::vector<PosTag>& tags) {
  std::vector<std::string> out;
  for (auto t : tags) out.emplace_back(to_string(t));
  return out;
}

std::vector<PosTag> parse_tags(const nlohmann::json& j) {
  std::vector<PosTag> out;
  for (const auto& t : j) out.push_back(parse_tag(t.get<std::string>()));
  return out;
}
}  // namespace

void save_dataset(const std::filesystem::path& dir, const std::vector<SceneSample>& samples,
                  const SceneOptions& options) {
  static_assert(std::endian::native == std::endian::little);
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["height"] = options.height;
  manifest["width"] = options.width;
  manifest["channels"] = 3;
  manifest["count"] = samples.size();
  manifest["image_file"] = "images.f32";
  auto& items = manifest["items"] = nlohmann::json::array();

  std::ofstream blob(dir / "images.f32", std::ios::binary | std::ios::trunc);
  if (!blob) fail(ErrorKind::IoError, "cannot write " + (dir / "images.f32").string());
  std::uint64_t offset = 0;
  for (const auto& s : samples) {
    nlohmann::json item;
    for (const auto& o : s.spec.objects) {
      item["objects"].push_back({{"shape", to_string(o.shape)}, {"color", to_string(o.color)}, {"cell", o.cell}});
    }
    item["caption"] = s.spec.caption;
    item["tags"] = tag_names(s.spec.tags);
    item["synthetic_caption"] = s.spec.synthetic_caption;
    item["synthetic_tags"] = tag_names(s.spec.synthetic_tags);
    for (const auto& m : s.spec.masks) item["masks"].push_back(mask_to_runs(m));
    item["offset"] = offset;
    for (double v : s.image.data()) {
      const float f = static_cast<float>(v);
      blob.write(reinterpret_cast<const char*>(&f), sizeof f);
    }
    offset += s.image.numel() * sizeof(float);
    items.push_back(std::move(item));
  }
  std::ofstream(dir / "manifest.json") << manifest.dump(1) << '\n';
}

std::vector<SceneSample> load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) fail(ErrorKind::DataError, "no manifest.json in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::DataError, std::string("manifest: ") + e.what());
  }
  std::ifstream blob_in(dir / manifest.value("image_file", std::string("images.f32")), std::ios::binary);
  if (!blob_in) fail(ErrorKind::DataError, "missing image blob in " + dir.string());
  const std::vector<char> blob((std::istreambuf_iterator<char>(blob_in)), std::istreambuf_iterator<char>());

  std::vector<SceneSample> out;
  try {
    const std::size_t h = manifest.at("height"), w = manifest.at("width"), c = manifest.at("channels");
    for (const auto& item : manifest.at("items")) {
      SceneSample s;
      for (const auto& o : item.at("objects")) {
        s.spec.objects.push_back({parse_shape(o.at("shape").get<std::string>()),
                                  parse_color(o.at("color").get<std::string>()), o.at("cell").get<int>()});
      }
      s.spec.caption = item.at("caption").get<std::vector<std::string>>();
      s.spec.tags = parse_tags(item.at("tags"));
      s.spec.synthetic_caption = item.at("synthetic_caption").get<std::vector<std::string>>();
      s.spec.synthetic_tags = parse_tags(item.at("synthetic_tags"));
      for (const auto& runs : item.at("masks")) {
        s.spec.masks.push_back(mask_from_runs(runs.get<std::vector<std::uint32_t>>(), h, w));
      }
      const std::uint64_t offset = item.at("offset");
      const std::size_t n = h * w * c;
      if (offset + n * sizeof(float) > blob.size()) fail(ErrorKind::DataError, "image blob too short");
      std::vector<double> values(n);
      for (std::size_t i = 0; i < n; ++i) {
        float f;
        std::memcpy(&f, blob.data() + offset + i * sizeof(float), sizeof f);
        values[i] = f;
      }
      s.image = Tensor({h, w, c}, std::move(values));
      out.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::DataError, std::string("manifest: ") + e.what());
  }
  if (out.empty()) fail(ErrorKind::DataError, "dataset is empty");
  return out;
}

}  // namespace kdiff
