//
// PolySeq - Copyright 2026 The PolySeq Authors.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef POLYSEQ_TOKENIZER_H_
#define POLYSEQ_TOKENIZER_H_

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "polyseq/schema.h"

namespace polyseq {

struct Descriptor {
  std::string name;
  std::optional<std::string> value;  // empty when missing

  /// The value string, or NAN_<name> when missing.
  std::string token() const { return value ? *value : "NAN_" + name; }

  bool operator==(const Descriptor &) const = default;
};

struct PolymerComponent {
  std::string smiles;  // '.'-joined repeating units of a copolymer
  std::vector<Descriptor> descriptors;

  bool operator==(const PolymerComponent &) const = default;
};

struct PolymerRecord {
  int id = 0;
  std::vector<PolymerComponent> components;
  std::vector<Descriptor> global_descriptors;
  std::optional<double> label;
  std::optional<std::string> split_value;
  std::size_t source_row = 0;
};

/// Flattens a record into the separator grammar:
///   SMILES $d1 $d2 | SMILES $d1 $d2 $g1 $g2
/// Throws SchemaError if descriptor names or counts do not match `schema`.
std::string assemble_sequence(const PolymerRecord &record,
                              const DatasetSchema &schema);

/// Chemically-aware tokenization of an assembled sequence.
///
/// Text after a descriptor separator is a single token when it is a NAN
/// token, a decimal literal or a declared category; any other descriptor
/// text (an anion, say) is sliced like SMILES. Inside SMILES, multi-letter
/// element symbols are never split and bracket atoms are sliced per symbol.
///
/// Throws TokenizeError with the byte offset of the first bad character.
std::vector<std::string> tokenize(std::string_view flat,
                                  const DatasetSchema &schema);

class Vocabulary {
public:
  static constexpr std::array<std::string_view, 5> kSpecialTokens = {
      "<s>", "</s>", "<pad>", "<unk>", "<mask>"};
  static constexpr int kBos = 0;
  static constexpr int kEos = 1;
  static constexpr int kPad = 2;
  static constexpr int kUnk = 3;
  static constexpr int kMask = 4;
  static constexpr int kNumSpecial = 5;

  /// Specials only.
  Vocabulary();

  /// `tokens[i]` gets id i. The specials must come first, in order.
  explicit Vocabulary(std::vector<std::string> tokens);

  int size() const { return static_cast<int>(tokens_.size()); }
  std::optional<int> find(std::string_view token) const;
  /// Id of `token`, or kUnk.
  int id(std::string_view token) const;
  const std::string &token(int id) const;
  const std::vector<std::string> &tokens() const { return tokens_; }
  static bool is_special(int id) { return id >= 0 && id < kNumSpecial; }

  /// Appends `token` if absent; returns its id.
  int add(const std::string &token);

  /// One token per line; line number is the id.
  void save(const std::filesystem::path &path) const;
  static Vocabulary load(const std::filesystem::path &path);

  bool operator==(const Vocabulary &other) const {
    return tokens_ == other.tokens_;
  }

private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// Specials, then `nan_tokens`, then corpus tokens with count >= min_count
/// ordered by (count desc, token asc).
Vocabulary build_vocab(std::span<const std::vector<std::string>> corpus,
                       int min_count = 1,
                       std::span<const std::string> nan_tokens = {});

/// Appends unseen corpus tokens (count >= min_count) to `base` in the same
/// order build_vocab uses. Existing ids are untouched.
Vocabulary extend_vocab(const Vocabulary &base,
                        std::span<const std::vector<std::string>> corpus,
                        int min_count = 1,
                        std::span<const std::string> nan_tokens = {});

struct TokenSequence {
  std::vector<std::string> tokens;
  std::vector<int> ids;
  std::vector<int> attention_mask;

  int length() const { return static_cast<int>(ids.size()); }
};

/// <s> body </s> <pad>...; the body is truncated so that </s> always fits.
/// Requires max_length >= 2.
TokenSequence encode(std::span<const std::string> tokens,
                     const Vocabulary &vocab, int max_length);

/// Maps non-special ids back to tokens, dropping specials other than <unk>.
std::vector<std::string> decode(std::span<const int> ids,
                                const Vocabulary &vocab);

/// Optional sign, digits, optional fraction, optional exponent.
bool is_decimal_literal(std::string_view text);

}  // namespace polyseq

#endif  // POLYSEQ_TOKENIZER_H_
