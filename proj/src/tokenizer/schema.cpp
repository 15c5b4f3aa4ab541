//
// PolySeq - Copyright 2026 The PolySeq Authors.
// SPDX-License-Identifier: Apache-2.0
//

#include "polyseq/schema.h"

#include <algorithm>
#include <fstream>
#include <set>

#include "polyseq/error.h"

namespace polyseq {
namespace {

using nlohmann::json;

const json &require(const json &j, const char *key, const std::string &where) {
  if (!j.is_object() || !j.contains(key))
    throw SchemaError(where + ": missing key '" + key + "'");
  return j.at(key);
}

void check_keys(const json &j, std::initializer_list<std::string_view> known,
                const std::string &where) {
  for (const auto &[key, value]: j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw SchemaError(where + ": unknown key '" + key + "'");
  }
}

std::string get_string(const json &j, const char *key,
                       const std::string &where) {
  const json &v = require(j, key, where);
  if (!v.is_string())
    throw SchemaError(where + "." + key + ": expected a string");
  return v.get<std::string>();
}

DescriptorKind parse_kind(const std::string &kind, const std::string &where) {
  if (kind == "numeric")
    return DescriptorKind::kNumeric;
  if (kind == "categorical")
    return DescriptorKind::kCategorical;
  if (kind == "smiles")
    return DescriptorKind::kSmiles;
  throw SchemaError(where + ".kind: unknown descriptor kind '" + kind + "'");
}

std::string_view kind_name(DescriptorKind kind) {
  switch (kind) {
  case DescriptorKind::kNumeric:
    return "numeric";
  case DescriptorKind::kCategorical:
    return "categorical";
  case DescriptorKind::kSmiles:
    return "smiles";
  }
  return "numeric";
}

DescriptorSpec parse_descriptor(const json &j, const std::string &where,
                                bool allow_columns) {
  check_keys(j, {"name", "column", "columns", "kind", "decimals", "categories"},
             where);
  DescriptorSpec d;
  d.name = get_string(j, "name", where);
  if (j.contains("column")) {
    d.columns.push_back(get_string(j, "column", where));
  } else if (allow_columns && j.contains("columns")) {
    for (const json &c: j.at("columns")) {
      if (!c.is_string())
        throw SchemaError(where + ".columns: expected strings");
      d.columns.push_back(c.get<std::string>());
    }
  } else {
    throw SchemaError(where + ": missing key 'column'");
  }
  if (j.contains("kind"))
    d.kind = parse_kind(get_string(j, "kind", where), where);
  if (j.contains("decimals")) {
    if (!j.at("decimals").is_number_integer())
      throw SchemaError(where + ".decimals: expected an integer");
    d.decimals = j.at("decimals").get<int>();
  }
  if (j.contains("categories")) {
    for (const json &c: j.at("categories")) {
      if (!c.is_string())
        throw SchemaError(where + ".categories: expected strings");
      d.categories.push_back(c.get<std::string>());
    }
  }
  return d;
}

json descriptor_json(const DescriptorSpec &d) {
  json j;
  j["name"] = d.name;
  if (d.columns.size() == 1)
    j["column"] = d.columns.front();
  else
    j["columns"] = d.columns;
  j["kind"] = std::string(kind_name(d.kind));
  if (d.decimals)
    j["decimals"] = *d.decimals;
  if (!d.categories.empty())
    j["categories"] = d.categories;
  return j;
}

char parse_separator(const json &j, const char *key, char fallback) {
  if (!j.contains(key))
    return fallback;
  const std::string s = get_string(j, key, "separators");
  if (s.size() != 1)
    throw SchemaError(std::string("separators.") + key
                      + ": expected a single character");
  return s.front();
}

}  // namespace

std::string_view to_string(AugmentationMode mode) {
  switch (mode) {
  case AugmentationMode::kNone:
    return "none";
  case AugmentationMode::kPerUnit:
    return "per_unit";
  case AugmentationMode::kTotal:
    return "total";
  case AugmentationMode::kUnlimited:
    return "unlimited";
  }
  return "none";
}

std::vector<std::string> DatasetSchema::nan_tokens() const {
  std::vector<std::string> out;
  auto add = [&](const DescriptorSpec &d) {
    std::string t = d.nan_token();
    if (std::find(out.begin(), out.end(), t) == out.end())
      out.push_back(std::move(t));
  };
  for (const ComponentSpec &c: components)
    for (const DescriptorSpec &d: c.descriptors)
      add(d);
  for (const DescriptorSpec &d: globals)
    add(d);
  return out;
}

bool DatasetSchema::is_categorical_value(std::string_view value) const {
  auto has = [&](const DescriptorSpec &d) {
    return std::find(d.categories.begin(), d.categories.end(), value)
           != d.categories.end();
  };
  for (const ComponentSpec &c: components)
    for (const DescriptorSpec &d: c.descriptors)
      if (has(d))
        return true;
  return std::any_of(globals.begin(), globals.end(), has);
}

void DatasetSchema::validate() const {
  if (max_components < 1)
    throw SchemaError("max_components must be positive");
  if (static_cast<int>(components.size()) != max_components)
    throw SchemaError("components: expected " + std::to_string(max_components)
                      + " component slots, got "
                      + std::to_string(components.size()));
  if (component_separator == descriptor_separator)
    throw SchemaError("separators must differ");

  std::set<std::string> columns;
  auto claim = [&](const std::string &column) {
    if (column.empty())
      throw SchemaError("empty column name");
    if (!columns.insert(column).second)
      throw SchemaError("column '" + column + "' is used twice");
  };

  for (std::size_t slot = 0; slot < components.size(); ++slot) {
    const ComponentSpec &c = components[slot];
    claim(c.smiles_column);
    std::vector<std::string> names;
    for (const DescriptorSpec &d: c.descriptors)
      names.push_back(d.name);
    if (slot > 0) {
      std::vector<std::string> first;
      for (const DescriptorSpec &d: components.front().descriptors)
        first.push_back(d.name);
      if (names != first)
        throw SchemaError("component " + std::to_string(slot + 1)
                          + ": descriptor names/order differ from component 1");
    }
    for (const DescriptorSpec &d: c.descriptors) {
      if (d.columns.size() != 1)
        throw SchemaError("component descriptor '" + d.name
                          + "' must have exactly one column");
      claim(d.columns.front());
    }
  }
  for (const DescriptorSpec &d: globals) {
    if (d.columns.size() != 1
        && static_cast<int>(d.columns.size()) != max_components)
      throw SchemaError("global '" + d.name + "': expected 1 or "
                        + std::to_string(max_components) + " columns");
    for (const std::string &column: d.columns)
      claim(column);
  }
  auto check_categories = [](const DescriptorSpec &d) {
    if (d.kind == DescriptorKind::kCategorical && d.categories.empty())
      throw SchemaError("categorical descriptor '" + d.name
                        + "' declares no categories");
  };
  for (const DescriptorSpec &d: globals)
    check_categories(d);
  for (const ComponentSpec &c: components)
    for (const DescriptorSpec &d: c.descriptors)
      check_categories(d);

  if (label_column.empty())
    throw SchemaError("missing label column");
  claim(label_column);
  if (split_column)
    claim(*split_column);

  if ((augmentation.mode == AugmentationMode::kPerUnit
       || augmentation.mode == AugmentationMode::kTotal)
      && augmentation.limit < 1)
    throw SchemaError("augmentation.limit must be positive");
}

DatasetSchema DatasetSchema::from_json(const json &j) {
  check_keys(j, {"format", "name", "max_components", "components", "globals",
                 "label", "split_column", "augmentation", "separators"},
             "schema");
  const json &format = require(j, "format", "schema");
  if (!format.is_number_integer() || format.get<int>() != 1)
    throw SchemaError("schema.format: unsupported version");

  DatasetSchema s;
  if (j.contains("name"))
    s.name = get_string(j, "name", "schema");
  if (j.contains("max_components")) {
    if (!j.at("max_components").is_number_integer())
      throw SchemaError("schema.max_components: expected an integer");
    s.max_components = j.at("max_components").get<int>();
  }

  const json &components = require(j, "components", "schema");
  if (!components.is_array() || components.empty())
    throw SchemaError("schema.components: expected a non-empty array");
  for (std::size_t i = 0; i < components.size(); ++i) {
    const std::string where = "components[" + std::to_string(i) + "]";
    check_keys(components[i], {"smiles", "descriptors"}, where);
    ComponentSpec c;
    c.smiles_column = get_string(components[i], "smiles", where);
    if (components[i].contains("descriptors")) {
      const json &ds = components[i].at("descriptors");
      for (std::size_t k = 0; k < ds.size(); ++k)
        c.descriptors.push_back(parse_descriptor(
            ds[k], where + ".descriptors[" + std::to_string(k) + "]", false));
    }
    s.components.push_back(std::move(c));
  }

  if (j.contains("globals")) {
    const json &gs = j.at("globals");
    for (std::size_t k = 0; k < gs.size(); ++k)
      s.globals.push_back(parse_descriptor(
          gs[k], "globals[" + std::to_string(k) + "]", true));
  }

  s.label_column = get_string(j, "label", "schema");
  if (j.contains("split_column"))
    s.split_column = get_string(j, "split_column", "schema");

  if (j.contains("augmentation")) {
    const json &a = j.at("augmentation");
    check_keys(a, {"mode", "limit"}, "augmentation");
    const std::string mode = get_string(a, "mode", "augmentation");
    if (mode == "none")
      s.augmentation.mode = AugmentationMode::kNone;
    else if (mode == "per_unit")
      s.augmentation.mode = AugmentationMode::kPerUnit;
    else if (mode == "total")
      s.augmentation.mode = AugmentationMode::kTotal;
    else if (mode == "unlimited")
      s.augmentation.mode = AugmentationMode::kUnlimited;
    else
      throw SchemaError("augmentation.mode: unknown mode '" + mode + "'");
    if (a.contains("limit")) {
      if (!a.at("limit").is_number_integer())
        throw SchemaError("augmentation.limit: expected an integer");
      s.augmentation.limit = a.at("limit").get<int>();
    }
  }

  if (j.contains("separators")) {
    const json &sep = j.at("separators");
    check_keys(sep, {"component", "descriptor"}, "separators");
    s.component_separator = parse_separator(sep, "component", '|');
    s.descriptor_separator = parse_separator(sep, "descriptor", '$');
  }

  s.validate();
  return s;
}

DatasetSchema DatasetSchema::load(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw SchemaError("cannot open schema file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception &e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

json DatasetSchema::to_json() const {
  json j;
  j["format"] = 1;
  j["name"] = name;
  j["max_components"] = max_components;
  j["components"] = json::array();
  for (const ComponentSpec &c: components) {
    json cj;
    cj["smiles"] = c.smiles_column;
    cj["descriptors"] = json::array();
    for (const DescriptorSpec &d: c.descriptors)
      cj["descriptors"].push_back(descriptor_json(d));
    j["components"].push_back(std::move(cj));
  }
  j["globals"] = json::array();
  for (const DescriptorSpec &d: globals)
    j["globals"].push_back(descriptor_json(d));
  j["label"] = label_column;
  if (split_column)
    j["split_column"] = *split_column;
  j["augmentation"] = {{"mode", std::string(to_string(augmentation.mode))},
                       {"limit", augmentation.limit}};
  j["separators"] = {{"component", std::string(1, component_separator)},
                     {"descriptor", std::string(1, descriptor_separator)}};
  return j;
}

}  // namespace polyseq
