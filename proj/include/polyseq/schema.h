//
// PolySeq - Copyright 2026 The PolySeq Authors.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef POLYSEQ_SCHEMA_H_
#define POLYSEQ_SCHEMA_H_

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace polyseq {

enum class DescriptorKind {
  kNumeric,      // decimal literal, one token
  kCategorical,  // declared value such as "S_1", one token
  kSmiles,       // e.g. an anion; tokenized like any SMILES
};

struct DescriptorSpec {
  std::string name;
  DescriptorKind kind = DescriptorKind::kNumeric;
  // One column for per-component descriptors and plain globals. Padded
  // globals (ratios) carry one column per component slot.
  std::vector<std::string> columns;
  // Fixed-decimal formatting applied at load time; verbatim when unset.
  std::optional<int> decimals;
  std::vector<std::string> categories;

  std::string nan_token() const { return "NAN_" + name; }
};

struct ComponentSpec {
  std::string smiles_column;
  std::vector<DescriptorSpec> descriptors;
};

enum class AugmentationMode {
  kNone,
  kPerUnit,    // each repeating unit to at most `limit` strings
  kTotal,      // each record to at most `limit` records
  kUnlimited,  // every distinct rotation
};

struct AugmentationSpec {
  AugmentationMode mode = AugmentationMode::kNone;
  int limit = 0;
};

/// Column layout and tokenization rules of one dataset.
struct DatasetSchema {
  std::string name = "default";
  int max_components = 1;
  std::vector<ComponentSpec> components;  // one per component slot
  std::vector<DescriptorSpec> globals;
  std::string label_column;
  std::optional<std::string> split_column;
  AugmentationSpec augmentation;
  char component_separator = '|';
  char descriptor_separator = '$';

  /// NAN_<name> for every descriptor, in schema order, without repeats.
  std::vector<std::string> nan_tokens() const;

  bool is_categorical_value(std::string_view value) const;

  /// Throws SchemaError.
  void validate() const;

  static DatasetSchema from_json(const nlohmann::json &j);
  static DatasetSchema load(const std::filesystem::path &path);
  nlohmann::json to_json() const;
};

std::string_view to_string(AugmentationMode mode);

}  // namespace polyseq

#endif  // POLYSEQ_SCHEMA_H_
