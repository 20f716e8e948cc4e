#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "got/geometry.hpp"
#include "got/image.hpp"

namespace got {

/// Malformed annotation input; carries the 1-based line number.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line) : std::runtime_error(what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Well-formed input that violates a data-model invariant.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Words = std::vector<std::string>;

/// Lowercases and splits on whitespace.
Words tokenize(const std::string& sentence);
std::string join_words(const Words& words);

struct AnnotatedObject {
  Box box;
  int superclass_id = 0;
  std::vector<std::string> captions;  // raw sentences, at least one
};

struct AnnotatedImage {
  std::string image_id;
  std::string image_path;  // relative to the annotation file
  int width = 0;
  int height = 0;
  Image pixels;  // [height, width, 3]; empty when loaded without pixels
  std::vector<AnnotatedObject> objects;

  ImageSize size() const { return {width, height}; }
};

struct Dataset {
  std::vector<std::string> superclasses;  // K names; index = superclass id
  std::vector<AnnotatedImage> images;

  int num_superclasses() const { return static_cast<int>(superclasses.size()); }
  std::size_t num_objects() const;
  std::size_t num_captions() const;
  /// Every caption of every object, tokenized.
  std::vector<Words> all_captions() const;
};

/// Throws ValidationError naming the image when any invariant fails.
void validate_image(const AnnotatedImage& image, int num_superclasses);

// ---------------------------------------------------------------------------
// Vocabulary

class Vocabulary {
 public:
  static constexpr const char* kEoc = "<eoc>";
  static constexpr const char* kUnk = "<unk>";

  /// Vocabulary holding only the reserved entries.
  Vocabulary();
  /// From an explicit index order; must start with the reserved entries.
  explicit Vocabulary(std::vector<std::string> index_to_word);

  int size() const { return static_cast<int>(index_to_word_.size()); }
  int eoc_index() const { return 0; }
  int unk_index() const { return 1; }
  /// unk_index() for unknown words.
  int index_of(const std::string& word) const;
  bool contains(const std::string& word) const { return word_to_index_.count(word) != 0; }
  const std::string& word(int index) const { return index_to_word_.at(static_cast<std::size_t>(index)); }
  const std::vector<std::string>& words() const { return index_to_word_; }

  bool operator==(const Vocabulary& other) const { return index_to_word_ == other.index_to_word_; }

 private:
  std::vector<std::string> index_to_word_;
  std::unordered_map<std::string, int> word_to_index_;
};

/// Keeps words with corpus frequency >= min_count, ordered by frequency
/// (descending) then lexicographically, after EOC and UNK.
Vocabulary build_vocabulary(const std::vector<Words>& captions, int min_count);

/// Token ids of exact length n_steps: the first n_steps words (UNK when
/// unknown), EOC padding after.
struct TokenizedCaption {
  std::vector<int> ids;
};

TokenizedCaption encode_caption(const Words& words, const Vocabulary& vocab, int n_steps);
/// Words up to the first EOC.
Words decode_caption(std::span<const int> ids, const Vocabulary& vocab);

// ---------------------------------------------------------------------------
// Annotation files

struct LoadOptions {
  bool load_pixels = true;
  /// Superclass names; when empty they are read from the sidecar file
  /// "superclasses.json" next to the annotations.
  std::vector<std::string> superclasses;
};

/// JSON lines, one image per line:
/// {"image_id","image_path","width","height","objects":[{"box","superclass","captions"}]}
Dataset load_annotations(const std::filesystem::path& path, const LoadOptions& options = {});
/// Writes the annotations file and its superclasses.json sidecar. Pixels are
/// written as PNG to image_path when `write_images` is set.
void write_annotations(const std::filesystem::path& path, const Dataset& dataset, bool write_images = false);

std::vector<std::string> read_superclasses(const std::filesystem::path& sidecar);

/// Split file: {"train": [ids...], "test": [ids...], ...}
std::map<std::string, std::vector<std::string>> read_splits(const std::filesystem::path& path);
void write_splits(const std::filesystem::path& path, const std::map<std::string, std::vector<std::string>>& splits);
Dataset select_split(const Dataset& dataset, const std::vector<std::string>& image_ids);
/// Deterministic shuffle-and-cut of image ids.
std::map<std::string, std::vector<std::string>> random_split(const Dataset& dataset, double train_fraction,
                                                             std::uint64_t seed);

/// Remaps superclass ids through `mapping` (source id -> target id) and
/// renames the class set to `target_names`. Throws std::invalid_argument when
/// a source class is missing from the mapping.
Dataset merge_superclasses(const Dataset& dataset, const std::map<int, int>& mapping,
                           const std::vector<std::string>& target_names);

// ---------------------------------------------------------------------------
// Synthetic shapes corpus

struct SyntheticTemplates {
  enum class Layout {
    Mixed,            // 1..max_objects objects of any kind, distinct (kind, colour)
    DistractorPairs,  // exactly two objects of the same kind in different colours
  };
  std::vector<std::string> kinds{"square", "circle", "triangle", "cross"};
  std::vector<std::string> colors{"red", "green", "blue", "yellow"};
  std::vector<std::string> sizes{"small", "large"};
  Layout layout = Layout::Mixed;
  int min_objects = 1;
  int max_objects = 3;
  bool short_caption = true;  // "a red square"
  bool long_caption = true;   // "a small red square"
};

/// Renders n_images canvas_size x canvas_size scenes of non-overlapping
/// filled shapes; superclass = shape kind. Same seed gives an identical corpus.
Dataset generate_synthetic_corpus(int n_images, std::uint64_t seed, int canvas_size,
                                  const SyntheticTemplates& templates = {});

}  // namespace got
