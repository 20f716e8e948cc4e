#include "got/datasets.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

namespace got {

using nlohmann::json;

Words tokenize(const std::string& sentence) {
  Words out;
  std::string cur;
  for (char ch : sentence) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string join_words(const Words& words) {
  std::string s;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) s += ' ';
    s += words[i];
  }
  return s;
}

std::size_t Dataset::num_objects() const {
  std::size_t n = 0;
  for (const auto& im : images) n += im.objects.size();
  return n;
}

std::size_t Dataset::num_captions() const {
  std::size_t n = 0;
  for (const auto& im : images)
    for (const auto& o : im.objects) n += o.captions.size();
  return n;
}

std::vector<Words> Dataset::all_captions() const {
  std::vector<Words> out;
  for (const auto& im : images)
    for (const auto& o : im.objects)
      for (const auto& c : o.captions) out.push_back(tokenize(c));
  return out;
}

void validate_image(const AnnotatedImage& image, int num_superclasses) {
  auto fail = [&](const std::string& why) { throw ValidationError("image " + image.image_id + ": " + why); };
  if (image.width < 1 || image.height < 1) fail("width and height must be >= 1");
  if (!image.pixels.empty()) {
    if (image.pixels.rank() != 3 || image.pixels.dim(0) != image.height || image.pixels.dim(1) != image.width ||
        image.pixels.dim(2) != 3) {
      fail("pixel array " + shape_str(image.pixels.shape()) + " does not match declared size");
    }
  }
  for (std::size_t k = 0; k < image.objects.size(); ++k) {
    const auto& o = image.objects[k];
    const auto& b = o.box;
    const std::string which = "object " + std::to_string(k);
    if (!(b.x1 < b.x2) || !(b.y1 < b.y2)) fail(which + " has a degenerate box");
    if (b.x1 < 0 || b.y1 < 0 || b.x2 > image.width || b.y2 > image.height) fail(which + " box lies outside the image");
    if (o.superclass_id < 0 || o.superclass_id >= num_superclasses) fail(which + " has an invalid superclass");
    if (o.captions.empty()) fail(which + " has no captions");
    for (const auto& c : o.captions)
      if (tokenize(c).empty()) fail(which + " has an empty caption");
  }
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{kEoc, kUnk}) {}

Vocabulary::Vocabulary(std::vector<std::string> index_to_word) : index_to_word_(std::move(index_to_word)) {
  if (index_to_word_.size() < 2 || index_to_word_[0] != kEoc || index_to_word_[1] != kUnk) {
    throw std::invalid_argument("vocabulary must start with the reserved EOC and UNK entries");
  }
  for (std::size_t i = 0; i < index_to_word_.size(); ++i) {
    if (!word_to_index_.emplace(index_to_word_[i], static_cast<int>(i)).second) {
      throw std::invalid_argument("duplicate vocabulary word '" + index_to_word_[i] + "'");
    }
  }
}

int Vocabulary::index_of(const std::string& word) const {
  auto it = word_to_index_.find(word);
  return it == word_to_index_.end() ? unk_index() : it->second;
}

Vocabulary build_vocabulary(const std::vector<Words>& captions, int min_count) {
  if (min_count < 1) throw std::invalid_argument("build_vocabulary: min_count must be >= 1");
  std::map<std::string, long> freq;
  for (const auto& c : captions)
    for (const auto& w : c) ++freq[w];
  std::vector<std::pair<std::string, long>> kept;
  for (const auto& [w, n] : freq) {
    if (n >= min_count && w != Vocabulary::kEoc && w != Vocabulary::kUnk) kept.emplace_back(w, n);
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> words{Vocabulary::kEoc, Vocabulary::kUnk};
  for (auto& [w, _] : kept) words.push_back(w);
  return Vocabulary(std::move(words));
}

TokenizedCaption encode_caption(const Words& words, const Vocabulary& vocab, int n_steps) {
  if (n_steps < 1) throw std::invalid_argument("encode_caption: n_steps must be >= 1");
  TokenizedCaption out;
  out.ids.assign(static_cast<std::size_t>(n_steps), vocab.eoc_index());
  const std::size_t n = std::min(words.size(), static_cast<std::size_t>(n_steps));
  for (std::size_t i = 0; i < n; ++i) out.ids[i] = vocab.index_of(words[i]);
  return out;
}

Words decode_caption(std::span<const int> ids, const Vocabulary& vocab) {
  Words out;
  for (int id : ids) {
    if (id == vocab.eoc_index()) break;
    out.push_back(vocab.word(id));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Annotation files

std::vector<std::string> read_superclasses(const std::filesystem::path& sidecar) {
  std::ifstream in(sidecar);
  if (!in) throw ValidationError("missing superclass sidecar " + sidecar.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError(sidecar.string() + ": " + e.what(), 1);
  }
  if (!j.contains("superclasses") || !j["superclasses"].is_array() || j["superclasses"].empty()) {
    throw ValidationError(sidecar.string() + ": expected a non-empty \"superclasses\" array");
  }
  return j["superclasses"].get<std::vector<std::string>>();
}

namespace {

AnnotatedImage parse_record(const json& j, const std::map<std::string, int>& class_ids, std::size_t line) {
  auto need = [&](const char* key) -> const json& {
    if (!j.contains(key)) throw ParseError("line " + std::to_string(line) + ": missing field '" + key + "'", line);
    return j.at(key);
  };
  AnnotatedImage im;
  try {
    im.image_id = need("image_id").get<std::string>();
    im.image_path = j.value("image_path", std::string{});
    im.width = need("width").get<int>();
    im.height = need("height").get<int>();
    for (const auto& o : need("objects")) {
      const auto b = o.at("box").get<std::vector<double>>();
      if (b.size() != 4) throw ParseError("line " + std::to_string(line) + ": box must have 4 numbers", line);
      const auto cls = o.at("superclass").get<std::string>();
      auto it = class_ids.find(cls);
      if (it == class_ids.end()) {
        throw ValidationError("image " + im.image_id + ": unknown superclass '" + cls + "'");
      }
      auto box = Box::try_make(b[0], b[1], b[2], b[3]);
      if (!box) throw ValidationError("image " + im.image_id + ": degenerate box");
      AnnotatedObject obj;
      obj.box = *box;
      obj.superclass_id = it->second;
      obj.captions = o.at("captions").get<std::vector<std::string>>();
      im.objects.push_back(std::move(obj));
    }
  } catch (const json::exception& e) {
    throw ParseError("line " + std::to_string(line) + ": " + e.what(), line);
  }
  return im;
}

}  // namespace

Dataset load_annotations(const std::filesystem::path& path, const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open annotations " + path.string());
  Dataset ds;
  ds.superclasses = options.superclasses.empty() ? read_superclasses(path.parent_path() / "superclasses.json")
                                                 : options.superclasses;
  std::map<std::string, int> class_ids;
  for (std::size_t i = 0; i < ds.superclasses.size(); ++i) class_ids[ds.superclasses[i]] = static_cast<int>(i);

  std::set<std::string> seen;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::exception& e) {
      throw ParseError("line " + std::to_string(line) + ": " + e.what(), line);
    }
    if (!j.is_object()) throw ParseError("line " + std::to_string(line) + ": expected a JSON object", line);
    AnnotatedImage im = parse_record(j, class_ids, line);
    if (!seen.insert(im.image_id).second) throw ValidationError("image " + im.image_id + ": duplicate image_id");
    if (options.load_pixels && !im.image_path.empty()) {
      im.pixels = read_image(path.parent_path() / im.image_path);
    }
    validate_image(im, ds.num_superclasses());
    ds.images.push_back(std::move(im));
  }
  return ds;
}

void write_annotations(const std::filesystem::path& path, const Dataset& dataset, bool write_images) {
  const auto dir = path.parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);
  {
    std::ofstream side(dir / "superclasses.json");
    side << json{{"superclasses", dataset.superclasses}}.dump() << "\n";
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& im : dataset.images) {
    json objs = json::array();
    for (const auto& o : im.objects) {
      objs.push_back({{"box", {o.box.x1, o.box.y1, o.box.x2, o.box.y2}},
                      {"superclass", dataset.superclasses.at(static_cast<std::size_t>(o.superclass_id))},
                      {"captions", o.captions}});
    }
    json rec{{"image_id", im.image_id},
             {"image_path", im.image_path},
             {"width", im.width},
             {"height", im.height},
             {"objects", objs}};
    out << rec.dump() << "\n";
    if (write_images && !im.pixels.empty() && !im.image_path.empty()) {
      const auto p = dir / im.image_path;
      std::filesystem::create_directories(p.parent_path());
      write_png(p, im.pixels);
    }
  }
}

std::map<std::string, std::vector<std::string>> read_splits(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open split file " + path.string());
  json j;
  try {
    in >> j;
    return j.get<std::map<std::string, std::vector<std::string>>>();
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what(), 1);
  }
}

void write_splits(const std::filesystem::path& path, const std::map<std::string, std::vector<std::string>>& splits) {
  std::ofstream out(path);
  out << json(splits).dump(1) << "\n";
}

Dataset select_split(const Dataset& dataset, const std::vector<std::string>& image_ids) {
  std::map<std::string, const AnnotatedImage*> by_id;
  for (const auto& im : dataset.images) by_id[im.image_id] = &im;
  Dataset out;
  out.superclasses = dataset.superclasses;
  for (const auto& id : image_ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw ValidationError("split references unknown image " + id);
    out.images.push_back(*it->second);
  }
  return out;
}

std::map<std::string, std::vector<std::string>> random_split(const Dataset& dataset, double train_fraction,
                                                             std::uint64_t seed) {
  std::vector<std::string> ids;
  for (const auto& im : dataset.images) ids.push_back(im.image_id);
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  const auto n_train = static_cast<std::size_t>(train_fraction * static_cast<double>(ids.size()) + 0.5);
  std::map<std::string, std::vector<std::string>> out;
  out["train"].assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  out["test"].assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  return out;
}

Dataset merge_superclasses(const Dataset& dataset, const std::map<int, int>& mapping,
                           const std::vector<std::string>& target_names) {
  for (int k = 0; k < dataset.num_superclasses(); ++k) {
    auto it = mapping.find(k);
    if (it == mapping.end()) {
      throw std::invalid_argument("merge_superclasses: mapping does not cover superclass " + std::to_string(k));
    }
    if (it->second < 0 || it->second >= static_cast<int>(target_names.size())) {
      throw std::invalid_argument("merge_superclasses: target id out of range for superclass " + std::to_string(k));
    }
  }
  Dataset out = dataset;
  out.superclasses = target_names;
  for (auto& im : out.images)
    for (auto& o : im.objects) o.superclass_id = mapping.at(o.superclass_id);
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

namespace {

struct Rgb {
  float r, g, b;
};

Rgb color_value(const std::string& name) {
  static const std::map<std::string, Rgb> table{
      {"red", {0.90f, 0.12f, 0.10f}},    {"green", {0.12f, 0.78f, 0.15f}}, {"blue", {0.12f, 0.25f, 0.92f}},
      {"yellow", {0.92f, 0.88f, 0.12f}}, {"white", {0.95f, 0.95f, 0.95f}}, {"purple", {0.60f, 0.15f, 0.80f}},
      {"orange", {0.95f, 0.55f, 0.10f}}, {"black", {0.02f, 0.02f, 0.02f}}};
  auto it = table.find(name);
  if (it == table.end()) throw GenerationError("unknown synthetic colour '" + name + "'");
  return it->second;
}

// Pixel-centre coverage test of a shape drawn in the square [x0, x0+s) x [y0, y0+s).
bool covers(const std::string& kind, int x0, int y0, int s, int px, int py) {
  const double u = (px + 0.5 - x0) / s;  // [0,1) across the square
  const double v = (py + 0.5 - y0) / s;
  if (u < 0 || u >= 1 || v < 0 || v >= 1) return false;
  if (kind == "square") return true;
  if (kind == "circle") return (u - 0.5) * (u - 0.5) + (v - 0.5) * (v - 0.5) <= 0.25;
  if (kind == "triangle") return std::abs(u - 0.5) <= 0.5 * v;
  if (kind == "cross") return (u >= 1.0 / 3 && u < 2.0 / 3) || (v >= 1.0 / 3 && v < 2.0 / 3);
  if (kind == "diamond") return std::abs(u - 0.5) + std::abs(v - 0.5) <= 0.5;
  throw GenerationError("unknown synthetic shape '" + kind + "'");
}

struct Placed {
  int kind, color, size;
  int x0, y0, side;
};

}  // namespace

Dataset generate_synthetic_corpus(int n_images, std::uint64_t seed, int canvas_size,
                                  const SyntheticTemplates& t) {
  if (n_images < 1) throw std::invalid_argument("generate_synthetic_corpus: n_images must be >= 1");
  if (t.kinds.empty() || t.colors.empty() || t.sizes.empty()) throw GenerationError("empty template set");
  if (!t.short_caption && !t.long_caption) throw GenerationError("template set enables no caption style");
  const bool pairs = t.layout == SyntheticTemplates::Layout::DistractorPairs;
  if (pairs && t.colors.size() < 2) throw GenerationError("distractor pairs need at least two colours");
  const int min_obj = pairs ? 2 : t.min_objects;
  const int max_obj = pairs ? 2 : t.max_objects;
  if (min_obj < 1 || max_obj < min_obj) throw GenerationError("invalid object count range");
  if (!pairs && static_cast<std::size_t>(max_obj) > t.kinds.size() * t.colors.size()) {
    throw GenerationError("not enough (kind, colour) combinations for distinct captions");
  }
  // Side length ranges as fractions of the canvas, one per size word.
  auto side_range = [&](int size_idx) {
    const double n = static_cast<double>(t.sizes.size());
    const double lo = 0.18 + 0.14 * size_idx / std::max(1.0, n - 1.0);
    return std::pair<int, int>{std::max(3, static_cast<int>(lo * canvas_size)),
                               std::max(3, static_cast<int>((lo + 0.05) * canvas_size))};
  };
  for (std::size_t s = 0; s < t.sizes.size(); ++s) {
    if (side_range(static_cast<int>(s)).second + 2 > canvas_size) {
      throw GenerationError("canvas of " + std::to_string(canvas_size) + " px is too small for the requested shapes");
    }
  }

  std::mt19937_64 rng(seed);
  auto uniform_int = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  Dataset ds;
  ds.superclasses = t.kinds;
  const int width = std::max(1, static_cast<int>(std::to_string(n_images).size()));
  for (int n = 0; n < n_images; ++n) {
    const int count = uniform_int(min_obj, max_obj);
    const int pair_kind = uniform_int(0, static_cast<int>(t.kinds.size()) - 1);
    // Placement is greedy, so a badly placed first shape can leave no room;
    // the whole scene is redrawn a bounded number of times before giving up.
    std::vector<Placed> placed;
    bool ok = false;
    for (int scene = 0; scene < 50 && !ok; ++scene) {
      placed.clear();
      std::set<std::pair<int, int>> used;
      ok = true;
      for (int k = 0; k < count && ok; ++k) {
        Placed p{};
        do {
          p.kind = pairs ? pair_kind : uniform_int(0, static_cast<int>(t.kinds.size()) - 1);
          p.color = uniform_int(0, static_cast<int>(t.colors.size()) - 1);
        } while (used.count({p.kind, p.color}));
        used.insert({p.kind, p.color});
        p.size = uniform_int(0, static_cast<int>(t.sizes.size()) - 1);
        const auto [lo, hi] = side_range(p.size);
        ok = false;
        for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
          p.side = uniform_int(lo, hi);
          p.x0 = uniform_int(1, canvas_size - p.side - 1);
          p.y0 = uniform_int(1, canvas_size - p.side - 1);
          ok = std::all_of(placed.begin(), placed.end(), [&](const Placed& q) {
            constexpr int gap = 2;
            return p.x0 + p.side + gap <= q.x0 || q.x0 + q.side + gap <= p.x0 || p.y0 + p.side + gap <= q.y0 ||
                   q.y0 + q.side + gap <= p.y0;
          });
        }
        if (ok) placed.push_back(p);
      }
    }
    if (!ok) {
      throw GenerationError("canvas of " + std::to_string(canvas_size) + " px cannot fit " + std::to_string(count) +
                            " non-overlapping shapes");
    }

    AnnotatedImage im;
    std::string num = std::to_string(n);
    im.image_id = "synth_" + std::string(static_cast<std::size_t>(width) - num.size(), '0') + num;
    im.image_path = "images/" + im.image_id + ".png";
    im.width = im.height = canvas_size;
    im.pixels = Image({canvas_size, canvas_size, 3});
    std::uniform_real_distribution<float> noise(-0.03f, 0.03f);
    for (auto& v : im.pixels.values()) v = 0.15f + noise(rng);
    for (const auto& p : placed) {
      const Rgb c = color_value(t.colors[static_cast<std::size_t>(p.color)]);
      const auto& kind = t.kinds[static_cast<std::size_t>(p.kind)];
      for (int y = p.y0; y < p.y0 + p.side; ++y) {
        for (int x = p.x0; x < p.x0 + p.side; ++x) {
          if (!covers(kind, p.x0, p.y0, p.side, x, y)) continue;
          float* px = im.pixels.data() + (static_cast<std::size_t>(y) * canvas_size + x) * 3;
          px[0] = c.r;
          px[1] = c.g;
          px[2] = c.b;
        }
      }
      AnnotatedObject obj;
      obj.box = Box(p.x0, p.y0, p.x0 + p.side, p.y0 + p.side);
      obj.superclass_id = p.kind;
      const auto& color = t.colors[static_cast<std::size_t>(p.color)];
      if (t.short_caption) obj.captions.push_back("a " + color + " " + kind);
      if (t.long_caption) obj.captions.push_back("a " + t.sizes[static_cast<std::size_t>(p.size)] + " " + color + " " + kind);
      im.objects.push_back(std::move(obj));
    }
    ds.images.push_back(std::move(im));
  }
  return ds;
}

}  // namespace got
