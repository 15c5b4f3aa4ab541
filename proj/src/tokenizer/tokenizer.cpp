//
// PolySeq - Copyright 2026 The PolySeq Authors.
// SPDX-License-Identifier: Apache-2.0
//

#include "polyseq/tokenizer.h"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include "polyseq/error.h"
#include "polyseq/io.h"
#include "polyseq/smiles.h"

namespace polyseq {
namespace {

bool is_upper(char c) { return std::isupper(static_cast<unsigned char>(c)); }
bool is_lower(char c) { return std::islower(static_cast<unsigned char>(c)); }
bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)); }

constexpr std::string_view kBareAromatic = "bcnops";
constexpr std::string_view kSmilesPunctuation = "*.^()=#+-/\\%@:[]";

bool is_nan_token(std::string_view text) {
  if (text.size() <= 4 || text.substr(0, 4) != "NAN_")
    return false;
  return std::all_of(text.begin() + 4, text.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
  });
}

// Slices one SMILES region starting at byte `offset` of the full sequence.
void tokenize_smiles(std::string_view text, std::size_t offset,
                     std::vector<std::string> &out) {
  bool in_bracket = false;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    const char next = i + 1 < text.size() ? text[i + 1] : '\0';

    if (c == '[') {
      if (in_bracket)
        throw TokenizeError(offset + i, "nested '['");
      in_bracket = true;
      out.emplace_back(1, c);
      ++i;
      continue;
    }
    if (c == ']') {
      in_bracket = false;
      out.emplace_back(1, c);
      ++i;
      continue;
    }

    if (is_upper(c)) {
      const std::string two {c, next};
      bool take_two = false;
      if (is_lower(next) && smiles::is_element_symbol(two)) {
        // Outside brackets "Sc" is S followed by aromatic c, not scandium.
        take_two = in_bracket || two == "Cl" || two == "Br"
                   || kBareAromatic.find(next) == std::string_view::npos;
      }
      if (take_two) {
        out.push_back(two);
        i += 2;
        continue;
      }
      if (!smiles::is_element_symbol(std::string(1, c)))
        throw TokenizeError(offset + i,
                            std::string("unknown element '") + c + "'");
      out.emplace_back(1, c);
      ++i;
      continue;
    }

    if (is_lower(c)) {
      if (in_bracket && (c == 's' || c == 'a') && next != '\0') {
        const std::string two {c, next};
        if (two == "se" || two == "as") {
          out.push_back(two);
          i += 2;
          continue;
        }
      }
      if (kBareAromatic.find(c) == std::string_view::npos)
        throw TokenizeError(offset + i,
                            std::string("unrecognized character '") + c + "'");
      out.emplace_back(1, c);
      ++i;
      continue;
    }

    if (is_digit(c) || kSmilesPunctuation.find(c) != std::string_view::npos) {
      out.emplace_back(1, c);
      ++i;
      continue;
    }

    std::string shown(1, c);
    if (static_cast<unsigned char>(c) < 32 || static_cast<unsigned char>(c) > 126)
      shown = "\\x" + std::to_string(static_cast<unsigned char>(c));
    throw TokenizeError(offset + i, "unrecognized character '" + shown + "'");
  }
}

std::vector<std::string> expected_global_names(const DatasetSchema &schema) {
  std::vector<std::string> names;
  for (const DescriptorSpec &d: schema.globals) {
    const std::size_t slots = d.columns.size() == 1 ? 1 : d.columns.size();
    for (std::size_t k = 0; k < slots; ++k)
      names.push_back(d.name);
  }
  return names;
}

using TokenCounts = std::map<std::string, long>;

std::vector<std::string> order_by_count(const TokenCounts &counts,
                                        int min_count) {
  std::vector<std::pair<std::string, long>> items;
  for (const auto &[token, count]: counts)
    if (count >= min_count)
      items.emplace_back(token, count);
  std::sort(items.begin(), items.end(), [](const auto &a, const auto &b) {
    if (a.second != b.second)
      return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> out;
  out.reserve(items.size());
  for (auto &item: items)
    out.push_back(std::move(item.first));
  return out;
}

}  // namespace

bool is_decimal_literal(std::string_view text) {
  std::size_t i = 0;
  if (i < text.size() && (text[i] == '-' || text[i] == '+'))
    ++i;
  std::size_t digits = 0;
  while (i < text.size() && is_digit(text[i])) {
    ++i;
    ++digits;
  }
  if (i < text.size() && text[i] == '.') {
    ++i;
    while (i < text.size() && is_digit(text[i])) {
      ++i;
      ++digits;
    }
  }
  if (digits == 0)
    return false;
  if (i < text.size() && (text[i] == 'e' || text[i] == 'E')) {
    ++i;
    if (i < text.size() && (text[i] == '-' || text[i] == '+'))
      ++i;
    std::size_t exp_digits = 0;
    while (i < text.size() && is_digit(text[i])) {
      ++i;
      ++exp_digits;
    }
    if (exp_digits == 0)
      return false;
  }
  return i == text.size();
}

std::string assemble_sequence(const PolymerRecord &record,
                              const DatasetSchema &schema) {
  if (record.components.empty())
    throw SchemaError("record " + std::to_string(record.id)
                      + " has no components");
  if (static_cast<int>(record.components.size()) > schema.max_components)
    throw SchemaError("record " + std::to_string(record.id) + " has "
                      + std::to_string(record.components.size())
                      + " components; schema allows "
                      + std::to_string(schema.max_components));

  const std::string sep(1, schema.descriptor_separator);
  std::string out;
  for (std::size_t k = 0; k < record.components.size(); ++k) {
    const PolymerComponent &component = record.components[k];
    const ComponentSpec &spec = schema.components[k];
    if (component.descriptors.size() != spec.descriptors.size())
      throw SchemaError("record " + std::to_string(record.id) + " component "
                        + std::to_string(k + 1) + ": expected "
                        + std::to_string(spec.descriptors.size())
                        + " descriptors");
    if (k > 0)
      out += schema.component_separator;
    out += component.smiles;
    for (std::size_t d = 0; d < spec.descriptors.size(); ++d) {
      if (component.descriptors[d].name != spec.descriptors[d].name)
        throw SchemaError("record " + std::to_string(record.id)
                          + ": descriptor '" + component.descriptors[d].name
                          + "' where schema expects '"
                          + spec.descriptors[d].name + "'");
      out += sep;
      out += component.descriptors[d].token();
    }
  }

  const std::vector<std::string> names = expected_global_names(schema);
  if (names.size() != record.global_descriptors.size())
    throw SchemaError("record " + std::to_string(record.id) + ": expected "
                      + std::to_string(names.size()) + " global descriptors");
  for (std::size_t g = 0; g < names.size(); ++g) {
    if (record.global_descriptors[g].name != names[g])
      throw SchemaError("record " + std::to_string(record.id)
                        + ": global descriptor '"
                        + record.global_descriptors[g].name
                        + "' where schema expects '" + names[g] + "'");
    out += sep;
    out += record.global_descriptors[g].token();
  }
  return out;
}

std::vector<std::string> tokenize(std::string_view flat,
                                  const DatasetSchema &schema) {
  std::vector<std::string> out;
  const char comp = schema.component_separator;
  const char desc = schema.descriptor_separator;
  auto next_separator = [&](std::size_t from) {
    std::size_t j = from;
    while (j < flat.size() && flat[j] != comp && flat[j] != desc)
      ++j;
    return j;
  };

  std::size_t i = 0;
  while (i < flat.size()) {
    const char c = flat[i];
    if (c == comp) {
      out.emplace_back(1, c);
      ++i;
      continue;
    }
    if (c == desc) {
      out.emplace_back(1, c);
      ++i;
      const std::size_t j = next_separator(i);
      const std::string_view segment = flat.substr(i, j - i);
      if (segment.empty())
        throw TokenizeError(i, "empty descriptor value");
      if (is_nan_token(segment) || is_decimal_literal(segment)
          || schema.is_categorical_value(segment))
        out.emplace_back(segment);
      else
        tokenize_smiles(segment, i, out);
      i = j;
      continue;
    }
    const std::size_t j = next_separator(i);
    tokenize_smiles(flat.substr(i, j - i), i, out);
    i = j;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

Vocabulary::Vocabulary() {
  for (std::string_view t: kSpecialTokens)
    add(std::string(t));
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) {
  if (tokens.size() < kSpecialTokens.size())
    throw Error("vocabulary is missing special tokens");
  for (std::size_t i = 0; i < kSpecialTokens.size(); ++i)
    if (tokens[i] != kSpecialTokens[i])
      throw Error("vocabulary id " + std::to_string(i) + " must be "
                  + std::string(kSpecialTokens[i]));
  for (std::string &t: tokens) {
    if (index_.contains(t))
      throw Error("duplicate vocabulary token '" + t + "'");
    index_.emplace(t, static_cast<int>(tokens_.size()));
    tokens_.push_back(std::move(t));
  }
}

std::optional<int> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end())
    return std::nullopt;
  return it->second;
}

int Vocabulary::id(std::string_view token) const {
  return find(token).value_or(kUnk);
}

const std::string &Vocabulary::token(int id) const {
  if (id < 0 || id >= size())
    throw Error("vocabulary id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

int Vocabulary::add(const std::string &token) {
  if (auto existing = find(token))
    return *existing;
  if (token.empty() || token.find('\n') != std::string::npos)
    throw Error("invalid vocabulary token");
  const int id = size();
  index_.emplace(token, id);
  tokens_.push_back(token);
  return id;
}

void Vocabulary::save(const std::filesystem::path &path) const {
  std::string text;
  for (const std::string &t: tokens_)
    text += t + '\n';
  write_file_atomic(path, text);
}

Vocabulary Vocabulary::load(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open vocabulary " + path.string());
  std::vector<std::string> tokens;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    tokens.push_back(std::move(line));
  }
  return Vocabulary(std::move(tokens));
}

Vocabulary build_vocab(std::span<const std::vector<std::string>> corpus,
                       int min_count, std::span<const std::string> nan_tokens) {
  return extend_vocab(Vocabulary(), corpus, min_count, nan_tokens);
}

Vocabulary extend_vocab(const Vocabulary &base,
                        std::span<const std::vector<std::string>> corpus,
                        int min_count, std::span<const std::string> nan_tokens) {
  Vocabulary vocab = base;
  for (const std::string &t: nan_tokens)
    vocab.add(t);
  TokenCounts counts;
  for (const auto &tokens: corpus)
    for (const std::string &t: tokens)
      ++counts[t];
  for (const std::string &t: order_by_count(counts, min_count))
    vocab.add(t);
  return vocab;
}

TokenSequence encode(std::span<const std::string> tokens,
                     const Vocabulary &vocab, int max_length) {
  if (max_length < 2)
    throw Error("encode: max_length must be at least 2");
  const std::size_t body =
      std::min(tokens.size(), static_cast<std::size_t>(max_length - 2));

  TokenSequence seq;
  seq.tokens.reserve(max_length);
  seq.ids.reserve(max_length);
  seq.tokens.emplace_back(Vocabulary::kSpecialTokens[Vocabulary::kBos]);
  seq.ids.push_back(Vocabulary::kBos);
  for (std::size_t i = 0; i < body; ++i) {
    seq.tokens.push_back(tokens[i]);
    seq.ids.push_back(vocab.id(tokens[i]));
  }
  seq.tokens.emplace_back(Vocabulary::kSpecialTokens[Vocabulary::kEos]);
  seq.ids.push_back(Vocabulary::kEos);
  seq.attention_mask.assign(seq.ids.size(), 1);
  while (static_cast<int>(seq.ids.size()) < max_length) {
    seq.tokens.emplace_back(Vocabulary::kSpecialTokens[Vocabulary::kPad]);
    seq.ids.push_back(Vocabulary::kPad);
    seq.attention_mask.push_back(0);
  }
  return seq;
}

std::vector<std::string> decode(std::span<const int> ids,
                                const Vocabulary &vocab) {
  std::vector<std::string> out;
  for (int id: ids) {
    if (Vocabulary::is_special(id) && id != Vocabulary::kUnk)
      continue;
    out.push_back(vocab.token(id));
  }
  return out;
}

}  // namespace polyseq
