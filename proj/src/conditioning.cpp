#include "kdiff/conditioning.hpp"

#include <algorithm>
#include <array>
#include <fstream>

#include "kdiff/error.hpp"

namespace kdiff {
namespace {

constexpr std::array<std::string_view, kTagCount> kTagNames = {
    "noun", "verb", "adjective", "numeral", "quantifier", "pronoun", "function"};
constexpr std::array<std::string_view, kTagCount> kTagTokens = {"[n]", "[v]", "[a]", "[m]",
                                                                "[q]", "[r]", "[f]"};

}  // namespace

std::string_view to_string(PosTag tag) { return kTagNames[static_cast<std::size_t>(tag)]; }

PosTag parse_tag(std::string_view name) {
  for (std::size_t i = 0; i < kTagCount; ++i) {
    if (kTagNames[i] == name) return static_cast<PosTag>(i);
  }
  fail(ErrorKind::TagMismatch, "unknown part-of-speech tag '" + std::string(name) + "'");
}

Vocabulary Vocabulary::from_words(const std::vector<std::string>& words) {
  Vocabulary v;
  for (auto t : kTagTokens) {
    v.ids_.emplace(std::string(t), static_cast<int>(v.tokens_.size()));
    v.tokens_.emplace_back(t);
  }
  for (const auto& w : words) {
    if (v.ids_.count(w)) continue;
    v.ids_.emplace(w, static_cast<int>(v.tokens_.size()));
    v.tokens_.push_back(w);
  }
  return v;
}

Vocabulary Vocabulary::standard() {
  return from_words({"a", "and", "at", "of", "the", "with", "one", "two", "three", "shape",
                     "shapes", "picture", "shows", "it", "red", "green", "blue", "yellow",
                     "square", "circle", "triangle", "top", "bottom", "left", "right", "four"});
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::DataError, "cannot read vocabulary " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) tokens.push_back(line);
  }
  if (tokens.size() < kTagCount) fail(ErrorKind::DataError, "vocabulary too short");
  for (std::size_t i = 0; i < kTagCount; ++i) {
    if (tokens[i] != kTagTokens[i]) fail(ErrorKind::DataError, "vocabulary must start with tag tokens");
  }
  return from_words(std::vector<std::string>(tokens.begin() + kTagCount, tokens.end()));
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::IoError, "cannot write vocabulary " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

int Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) fail(ErrorKind::UnknownWord, "'" + std::string(token) + "' not in vocabulary");
  return it->second;
}

bool Vocabulary::contains(std::string_view token) const { return ids_.count(std::string(token)) > 0; }

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    fail(ErrorKind::VocabularyOverflow, "token id " + std::to_string(id));
  }
  return tokens_[id];
}

ConditioningInput tokenize_with_tags(const Vocabulary& vocab, const std::vector<std::string>& words,
                                     const std::vector<PosTag>& tags) {
  if (words.size() != tags.size()) {
    fail(ErrorKind::TagMismatch, std::to_string(words.size()) + " words but " +
                                     std::to_string(tags.size()) + " tags");
  }
  ConditioningInput out;
  out.pos_tags = tags;
  for (std::size_t i = 0; i < words.size(); ++i) {
    out.tokens.push_back(vocab.tag_token(tags[i]));
    out.keyword_flags.push_back(false);
    out.tokens.push_back(vocab.id(words[i]));
    out.keyword_flags.push_back(is_notional(tags[i]));
  }
  return out;
}

ConditioningInput tokenize_plain(const Vocabulary& vocab, const std::vector<std::string>& words) {
  ConditioningInput out;
  for (const auto& w : words) {
    out.tokens.push_back(vocab.id(w));
    out.keyword_flags.push_back(false);
    out.pos_tags.push_back(PosTag::Function);
  }
  return out;
}

std::vector<int> strip_tag_tokens(const Vocabulary& vocab, const std::vector<int>& tokens) {
  std::vector<int> out;
  for (int t : tokens) {
    if (!vocab.is_tag_token(t)) out.push_back(t);
  }
  return out;
}

AttentionScale build_attention_scale(std::size_t n_x, const std::vector<bool>& keyword_flags, double w_a,
                                     bool enabled) {
  if (!(w_a >= 0.0)) fail(ErrorKind::NegativeScale, "w_a must be >= 0, got " + std::to_string(w_a));
  const std::size_t n_y = keyword_flags.size();
  AttentionScale s;
  s.w_a = w_a;
  s.enabled = enabled;
  s.matrix = Tensor({n_x, n_x + n_y}, 1.0);
  if (!enabled) return s;
  const double up = 1.0 + w_a;
  // Every row is an image token; columns are [image tokens ; text tokens].
  for (std::size_t i = 0; i < n_x; ++i) {
    for (std::size_t j = 0; j < n_x + n_y; ++j) {
      const bool image_col = j < n_x;
      if (image_col || keyword_flags[j - n_x]) s.matrix.at(i, j) = up;
    }
  }
  return s;
}

LossWeightMap build_loss_weight(const std::vector<RegionMask>& masks, double w_l, std::size_t n_h,
                                std::size_t n_w) {
  if (!(w_l >= 0.0)) fail(ErrorKind::NegativeScale, "w_l must be >= 0, got " + std::to_string(w_l));
  LossWeightMap out;
  out.w_l = w_l;
  out.weights = Tensor({n_h, n_w}, 1.0);
  for (const auto& m : masks) {
    if (m.height != n_h || m.width != n_w || m.cells.size() != n_h * n_w) {
      fail(ErrorKind::ShapeMismatch, "region mask " + std::to_string(m.height) + "x" +
                                         std::to_string(m.width) + " on a " + std::to_string(n_h) +
                                         "x" + std::to_string(n_w) + " grid");
    }
  }
  const double up = 1.0 + w_l;
  for (std::size_t i = 0; i < n_h * n_w; ++i) {
    const bool key = std::any_of(masks.begin(), masks.end(), [&](const RegionMask& m) { return m.cells[i] != 0; });
    if (key) out.weights[i] = up;
  }
  return out;
}

ConditioningInput augment_sample(const Vocabulary& vocab, const AnnotatedCaption& sample,
                                 const AugmentPolicy& policy, Rng& rng) {
  const bool knowledge = rng.bernoulli(policy.p_know);
  const bool replace = rng.bernoulli(policy.p_cap);

  std::vector<std::string> words = replace ? sample.synthetic_words : sample.words;
  std::vector<PosTag> tags = replace ? sample.synthetic_tags : sample.tags;

  AugmentationRecord record;
  record.knowledge_enhanced = knowledge;
  record.caption_replaced = replace;
  if (knowledge && policy.append_labels) {
    for (const auto& label : sample.object_labels) {
      if (std::find(words.begin(), words.end(), label) != words.end()) continue;
      words.push_back(label);
      tags.push_back(PosTag::Noun);
      record.appended_labels.push_back(label);
    }
  }

  ConditioningInput out = (knowledge && policy.insert_tokens) ? tokenize_with_tags(vocab, words, tags)
                                                              : tokenize_plain(vocab, words);
  if (!(knowledge && policy.insert_tokens)) {
    // Keep the lexical annotation so attention strengthening can still be
    // toggled on its own for ablations.
    out.pos_tags = tags;
    for (std::size_t i = 0; i < tags.size(); ++i) out.keyword_flags[i] = is_notional(tags[i]);
  }
  out.scale_attention = knowledge && policy.scale_attention;
  out.weight_loss = knowledge && policy.weight_loss;
  if (out.weight_loss) out.region_masks = sample.object_masks;
  out.augmentation = std::move(record);
  return out;
}

}  // namespace kdiff
