#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kdiff/rng.hpp"
#include "kdiff/tensor.hpp"

namespace kdiff {

enum class PosTag : std::uint8_t { Noun, Verb, Adjective, Numeral, Quantifier, Pronoun, Function };

inline constexpr std::size_t kTagCount = 7;

std::string_view to_string(PosTag tag);
PosTag parse_tag(std::string_view name);
/// Notional words (everything except function words) are keywords.
constexpr bool is_notional(PosTag tag) { return tag != PosTag::Function; }

/// Closed vocabulary. Ids 0..kTagCount-1 are the part-of-speech marker
/// tokens, in PosTag order; words follow.
class Vocabulary {
 public:
  /// The built-in vocabulary of the shapes corpus.
  static Vocabulary standard();
  static Vocabulary from_words(const std::vector<std::string>& words);
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  int id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(int id) const;
  std::size_t size() const noexcept { return tokens_.size(); }
  int tag_token(PosTag tag) const { return static_cast<int>(tag); }
  bool is_tag_token(int id) const { return id >= 0 && id < static_cast<int>(kTagCount); }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

/// Boolean grid marking one key object's pixels.
struct RegionMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> cells;

  bool at(std::size_t r, std::size_t c) const { return cells[r * width + c] != 0; }
};

struct AugmentationRecord {
  bool knowledge_enhanced = false;
  bool caption_replaced = false;
  std::vector<std::string> appended_labels;
};

struct ConditioningInput {
  std::vector<int> tokens;
  std::vector<PosTag> pos_tags;  // one per caption word
  std::vector<bool> keyword_flags;  // one per token
  std::vector<RegionMask> region_masks;
  AugmentationRecord augmentation;
  bool scale_attention = false;
  bool weight_loss = false;
};

/// Inserts each word's tag marker before it. Keyword flags are set on the
/// tokens of notional words; markers are never keywords.
ConditioningInput tokenize_with_tags(const Vocabulary& vocab, const std::vector<std::string>& words,
                                     const std::vector<PosTag>& tags);

/// Untagged tokenization used at inference: no markers, no keywords.
ConditioningInput tokenize_plain(const Vocabulary& vocab, const std::vector<std::string>& words);

std::vector<int> strip_tag_tokens(const Vocabulary& vocab, const std::vector<int>& tokens);

/// Multiplicative attention-logit weights for image-token rows over the
/// [image ; text] key columns.
struct AttentionScale {
  Tensor matrix;  // n_x x (n_x + n_y)
  double w_a = 0.0;
  bool enabled = false;
  std::size_t image_tokens() const { return matrix.dim(0); }
  std::size_t text_tokens() const { return matrix.dim(1) - matrix.dim(0); }
};

AttentionScale build_attention_scale(std::size_t n_x, const std::vector<bool>& keyword_flags, double w_a,
                                     bool enabled);

struct LossWeightMap {
  Tensor weights;  // n_h x n_w
  double w_l = 0.0;
};

LossWeightMap build_loss_weight(const std::vector<RegionMask>& masks, double w_l, std::size_t n_h,
                                std::size_t n_w);

/// Raw training annotations for one image, as supplied by the data generator.
struct AnnotatedCaption {
  std::vector<std::string> words;
  std::vector<PosTag> tags;
  std::vector<std::string> synthetic_words;
  std::vector<PosTag> synthetic_tags;
  std::vector<std::string> object_labels;  // one per key object, tagged noun
  std::vector<RegionMask> object_masks;
};

struct AugmentPolicy {
  double p_know = 0.5;
  double p_cap = 0.1;
  bool insert_tokens = true;
  bool scale_attention = true;
  bool weight_loss = true;
  bool append_labels = true;
};

/// Applies the training-time knowledge strategies to one sample. Draws the
/// knowledge decision, then the caption-replacement decision, always in that
/// order. Label appending and the three knowledge strategies only apply to
/// knowledge-selected samples.
ConditioningInput augment_sample(const Vocabulary& vocab, const AnnotatedCaption& sample,
                                 const AugmentPolicy& policy, Rng& rng);

}  // namespace kdiff
