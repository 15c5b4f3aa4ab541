//
// PolySeq - Copyright 2026 The PolySeq Authors.
// SPDX-License-Identifier: Apache-2.0
//

#include "polyseq/data.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_set>

#include "polyseq/io.h"
#include "polyseq/smiles.h"

namespace polyseq {
namespace {

// Cap on Cartesian products materialized by one record.
constexpr std::size_t kMaxCombinations = 4096;

bool is_missing(std::string_view cell) {
  return cell.empty() || cell == "NaN" || cell == "nan" || cell == "NA";
}

std::string trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t'))
    s.remove_suffix(1);
  return std::string(s);
}

std::vector<std::string> split_units(const std::string &smiles) {
  std::vector<std::string> units;
  std::size_t start = 0;
  for (;;) {
    const std::size_t dot = smiles.find('.', start);
    units.push_back(smiles.substr(start, dot - start));
    if (dot == std::string::npos)
      break;
    start = dot + 1;
  }
  return units;
}

// Cartesian product, first list varying slowest, capped.
std::vector<std::vector<std::string>>
product(const std::vector<std::vector<std::string>> &lists, std::size_t cap) {
  std::vector<std::vector<std::string>> out {{}};
  for (const auto &list: lists) {
    std::vector<std::vector<std::string>> next;
    for (const auto &prefix: out) {
      for (const std::string &item: list) {
        if (next.size() >= cap)
          break;
        auto row = prefix;
        row.push_back(item);
        next.push_back(std::move(row));
      }
    }
    out = std::move(next);
  }
  return out;
}

std::string join(const std::vector<std::string> &parts, char sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i > 0)
      out += sep;
    out += parts[i];
  }
  return out;
}

// Original unit first, then its rotations in order, at most `cap` in all.
std::vector<std::string> unit_variants(const std::string &unit,
                                       std::size_t cap) {
  const auto graphs = smiles::parse_smiles(unit);
  std::vector<std::string> out {unit};
  if (graphs.size() != 1)
    return out;
  for (std::string &s: smiles::enumerate_smiles(graphs.front(), std::nullopt)) {
    if (out.size() >= cap)
      break;
    if (s != unit)
      out.push_back(std::move(s));
  }
  return out;
}

std::optional<std::string> format_descriptor(const DescriptorSpec &spec,
                                             const std::string &cell,
                                             std::string &error) {
  if (is_missing(cell))
    return std::nullopt;
  switch (spec.kind) {
  case DescriptorKind::kNumeric: {
    if (!is_decimal_literal(cell)) {
      error = "'" + cell + "' is not a decimal number";
      return std::nullopt;
    }
    const double v = std::strtod(cell.c_str(), nullptr);
    if (!std::isfinite(v)) {
      error = "'" + cell + "' is not finite";
      return std::nullopt;
    }
    if (!spec.decimals)
      return cell;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", *spec.decimals, v);
    return std::string(buf);
  }
  case DescriptorKind::kCategorical:
    if (std::find(spec.categories.begin(), spec.categories.end(), cell)
        == spec.categories.end()) {
      error = "'" + cell + "' is not a declared category";
      return std::nullopt;
    }
    return cell;
  case DescriptorKind::kSmiles:
    try {
      smiles::parse_smiles(cell);
    } catch (const SyntaxError &e) {
      error = std::string("invalid SMILES: ") + e.what();
      return std::nullopt;
    }
    return cell;
  }
  return cell;
}

}  // namespace

// --- CSV -------------------------------------------------------------------

CsvTable parse_csv(std::string_view text) {
  CsvTable table;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  bool row_has_content = false;
  std::size_t line = 1;
  std::size_t row_line = 1;

  auto end_field = [&]() {
    row.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_row = [&]() {
    end_field();
    const bool blank = row.size() == 1 && row.front().empty() && !row_has_content;
    if (!blank) {
      if (table.header.empty() && table.rows.empty()) {
        table.header = std::move(row);
      } else {
        if (row.size() != table.header.size())
          throw IoError("CSV line " + std::to_string(row_line) + ": expected "
                        + std::to_string(table.header.size())
                        + " fields, got " + std::to_string(row.size()));
        table.rows.push_back(std::move(row));
        table.lines.push_back(row_line);
      }
    }
    row.clear();
    row_has_content = false;
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n')
          ++line;
        field += c;
      }
      continue;
    }
    if (c == '"' && !field_started) {
      in_quotes = true;
      field_started = true;
      row_has_content = true;
    } else if (c == ',') {
      end_field();
      row_has_content = true;
    } else if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') {
      continue;
    } else if (c == '\n') {
      end_row();
      ++line;
      row_line = line;
    } else {
      field += c;
      field_started = true;
      row_has_content = true;
    }
  }
  if (in_quotes)
    throw IoError("CSV line " + std::to_string(row_line)
                  + ": unterminated quoted field");
  if (row_has_content || !field.empty())
    end_row();
  return table;
}

std::string csv_field(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos)
    return std::string(field);
  std::string out = "\"";
  for (char c: field) {
    if (c == '"')
      out += '"';
    out += c;
  }
  return out + "\"";
}

std::string csv_row(const std::vector<std::string> &fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i > 0)
      out += ',';
    out += csv_field(fields[i]);
  }
  return out + "\n";
}

// --- loading ---------------------------------------------------------------

DatasetError::DatasetError(std::vector<RowError> errors)
    : Error([&] {
        std::string msg = std::to_string(errors.size()) + " bad row(s)";
        for (std::size_t i = 0; i < errors.size() && i < 5; ++i)
          msg += "; line " + std::to_string(errors[i].line) + ", column '"
                 + errors[i].column + "': " + errors[i].message;
        return msg;
      }()),
      errors_(std::move(errors)) {}

std::vector<PolymerRecord> load_dataset(const std::filesystem::path &path,
                                        const DatasetSchema &schema,
                                        const LoadOptions &options) {
  return load_dataset_text(read_file(path), schema, options);
}

std::vector<PolymerRecord> load_dataset_text(std::string_view text,
                                             const DatasetSchema &schema,
                                             const LoadOptions &options) {
  const CsvTable table = parse_csv(text);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < table.header.size(); ++i)
    col[trim(table.header[i])] = i;

  std::vector<RowError> header_errors;
  auto need = [&](const std::string &name) {
    if (!col.count(name))
      header_errors.push_back({1, name, "column missing from header"});
  };
  for (const ComponentSpec &c: schema.components) {
    need(c.smiles_column);
    for (const DescriptorSpec &d: c.descriptors)
      need(d.columns.front());
  }
  for (const DescriptorSpec &d: schema.globals)
    for (const std::string &c: d.columns)
      need(c);
  need(schema.label_column);
  if (schema.split_column)
    need(*schema.split_column);
  if (!header_errors.empty())
    throw DatasetError(std::move(header_errors));

  std::vector<PolymerRecord> records;
  std::vector<RowError> errors;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto &row = table.rows[r];
    const std::size_t line = table.lines[r];
    auto cell = [&](const std::string &name) {
      return trim(row[col.at(name)]);
    };
    std::vector<RowError> row_errors;
    auto fail = [&](const std::string &column, const std::string &msg) {
      row_errors.push_back({line, column, msg});
    };

    PolymerRecord rec;
    rec.id = static_cast<int>(r);
    rec.source_row = line;
    bool ended = false;
    for (std::size_t slot = 0; slot < schema.components.size(); ++slot) {
      const ComponentSpec &spec = schema.components[slot];
      const std::string smi = cell(spec.smiles_column);
      if (smi.empty()) {
        if (slot == 0)
          fail(spec.smiles_column, "first component has no SMILES");
        ended = true;
        continue;
      }
      if (ended) {
        fail(spec.smiles_column, "component follows an empty component slot");
        continue;
      }
      try {
        smiles::parse_smiles(smi);
      } catch (const SyntaxError &e) {
        fail(spec.smiles_column, std::string("invalid SMILES: ") + e.what());
        continue;
      }
      PolymerComponent comp;
      comp.smiles = smi;
      for (const DescriptorSpec &d: spec.descriptors) {
        std::string err;
        auto value = format_descriptor(d, cell(d.columns.front()), err);
        if (!err.empty())
          fail(d.columns.front(), err);
        comp.descriptors.push_back({d.name, value});
      }
      rec.components.push_back(std::move(comp));
    }

    for (const DescriptorSpec &d: schema.globals) {
      for (std::size_t k = 0; k < d.columns.size(); ++k) {
        std::string err;
        const std::string raw = cell(d.columns[k]);
        auto value = format_descriptor(d, raw, err);
        if (!err.empty())
          fail(d.columns[k], err);
        // Padded per-component values must be missing past the last component.
        if (d.columns.size() > 1 && k >= rec.components.size() && value)
          fail(d.columns[k], "value given for an absent component");
        rec.global_descriptors.push_back({d.name, value});
      }
    }

    const std::string label = cell(schema.label_column);
    if (label.empty()) {
      fail(schema.label_column, "missing label");
    } else {
      char *end = nullptr;
      const double y = std::strtod(label.c_str(), &end);
      if (end == label.c_str() || *end != '\0' || !std::isfinite(y))
        fail(schema.label_column, "label '" + label + "' is not a finite number");
      else
        rec.label = y;
    }
    if (schema.split_column)
      rec.split_value = cell(*schema.split_column);

    if (row_errors.empty()) {
      records.push_back(std::move(rec));
    } else {
      errors.insert(errors.end(), row_errors.begin(), row_errors.end());
    }
  }

  if (!errors.empty()) {
    if (!options.skip_bad_rows)
      throw DatasetError(std::move(errors));
    if (options.warnings)
      for (const RowError &e: errors)
        *options.warnings << "warning: skipping line " << e.line << ", column '"
                          << e.column << "': " << e.message << "\n";
  }
  return records;
}

std::string records_to_csv(const std::vector<PolymerRecord> &records,
                           const DatasetSchema &schema) {
  std::vector<std::string> header {"source_id"};
  for (const ComponentSpec &c: schema.components) {
    header.push_back(c.smiles_column);
    for (const DescriptorSpec &d: c.descriptors)
      header.push_back(d.columns.front());
  }
  for (const DescriptorSpec &d: schema.globals)
    header.insert(header.end(), d.columns.begin(), d.columns.end());
  header.push_back(schema.label_column);
  if (schema.split_column)
    header.push_back(*schema.split_column);

  std::string out = csv_row(header);
  for (const PolymerRecord &rec: records) {
    std::vector<std::string> row {std::to_string(rec.id)};
    for (std::size_t slot = 0; slot < schema.components.size(); ++slot) {
      const std::size_t nd = schema.components[slot].descriptors.size();
      if (slot < rec.components.size()) {
        row.push_back(rec.components[slot].smiles);
        for (const Descriptor &d: rec.components[slot].descriptors)
          row.push_back(d.value.value_or(""));
      } else {
        row.insert(row.end(), nd + 1, "");
      }
    }
    for (const Descriptor &d: rec.global_descriptors)
      row.push_back(d.value.value_or(""));
    if (rec.label) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.17g", *rec.label);
      row.push_back(buf);
    } else {
      row.push_back("");
    }
    if (schema.split_column)
      row.push_back(rec.split_value.value_or(""));
    out += csv_row(row);
  }
  return out;
}

// --- splits ----------------------------------------------------------------

std::vector<Fold> make_splits(const std::vector<PolymerRecord> &records,
                              const SplitPlan &plan) {
  std::vector<Fold> folds;
  if (plan.kind == SplitPlan::Kind::kKFold) {
    if (plan.k < 2)
      throw ConfigError("split.k: must be at least 2");
    std::vector<int> ids;
    for (const PolymerRecord &r: records)
      ids.push_back(r.id);
    std::mt19937_64 rng(plan.seed);
    std::shuffle(ids.begin(), ids.end(), rng);
    const std::size_t n = ids.size();
    const std::size_t k = static_cast<std::size_t>(plan.k);
    std::size_t start = 0;
    for (std::size_t f = 0; f < k; ++f) {
      const std::size_t size = n / k + (f < n % k ? 1 : 0);
      Fold fold;
      fold.index = static_cast<int>(f);
      fold.test_ids.assign(ids.begin() + static_cast<long>(start),
                           ids.begin() + static_cast<long>(start + size));
      for (std::size_t i = 0; i < n; ++i)
        if (i < start || i >= start + size)
          fold.train_ids.push_back(ids[i]);
      std::sort(fold.test_ids.begin(), fold.test_ids.end());
      std::sort(fold.train_ids.begin(), fold.train_ids.end());
      if (fold.test_ids.empty() || fold.train_ids.empty())
        throw EmptySplit("fold " + std::to_string(f) + " of " + std::to_string(k)
                         + " is empty with " + std::to_string(n) + " records");
      folds.push_back(std::move(fold));
      start += size;
    }
    return folds;
  }

  Fold fold;
  for (const PolymerRecord &r: records) {
    const std::string value = r.split_value.value_or("");
    auto it = plan.routes.find(value);
    if (it == plan.routes.end())
      throw ConfigError("split.routes: no route for split value '" + value
                        + "'");
    if (it->second == "train")
      fold.train_ids.push_back(r.id);
    else if (it->second == "test")
      fold.test_ids.push_back(r.id);
    else
      throw ConfigError("split.routes: '" + it->second
                        + "' is neither train nor test");
  }
  if (fold.train_ids.empty())
    throw EmptySplit("holdout train split is empty");
  if (fold.test_ids.empty())
    throw EmptySplit("holdout test split is empty");
  folds.push_back(std::move(fold));
  return folds;
}

std::string splits_to_csv(const std::vector<Fold> &folds,
                          const SplitPlan &plan) {
  std::vector<std::pair<int, std::string>> rows;
  for (const Fold &f: folds) {
    if (plan.kind == SplitPlan::Kind::kKFold) {
      for (int id: f.test_ids)
        rows.emplace_back(id, std::to_string(f.index));
    } else {
      for (int id: f.train_ids)
        rows.emplace_back(id, "train");
      for (int id: f.test_ids)
        rows.emplace_back(id, "test");
    }
  }
  std::sort(rows.begin(), rows.end());
  std::string out = "record_id,fold\n";
  for (const auto &[id, fold]: rows)
    out += std::to_string(id) + "," + fold + "\n";
  return out;
}

// --- augmentation -----------------------------------------------------------

std::vector<PolymerRecord> augment_record(const PolymerRecord &record,
                                          const DatasetSchema &schema,
                                          std::uint64_t seed,
                                          std::ostream *warnings) {
  const AugmentationSpec &spec = schema.augmentation;
  if (spec.mode == AugmentationMode::kNone)
    return {record};

  std::vector<std::vector<std::string>> component_lists;
  try {
    const std::size_t unit_cap = spec.mode == AugmentationMode::kPerUnit
                                     ? static_cast<std::size_t>(spec.limit)
                                     : kMaxCombinations;
    for (const PolymerComponent &c: record.components) {
      std::vector<std::vector<std::string>> unit_lists;
      for (const std::string &unit: split_units(c.smiles))
        unit_lists.push_back(unit_variants(unit, unit_cap));
      std::vector<std::string> joined;
      for (const auto &combo: product(unit_lists, kMaxCombinations))
        joined.push_back(join(combo, '.'));
      component_lists.push_back(std::move(joined));
    }
  } catch (const Error &e) {
    if (warnings)
      *warnings << "warning: record " << record.id
                << " not augmented: " << e.what() << "\n";
    return {record};
  }

  auto combos = product(component_lists, kMaxCombinations);
  if (spec.mode == AugmentationMode::kTotal && combos.size() > 1) {
    std::mt19937_64 rng(seed);
    std::shuffle(combos.begin() + 1, combos.end(), rng);
  }

  std::vector<PolymerRecord> out;
  std::unordered_set<std::string> seen;
  const std::size_t limit = spec.mode == AugmentationMode::kTotal
                                ? static_cast<std::size_t>(spec.limit)
                                : combos.size();
  for (const auto &combo: combos) {
    if (out.size() >= limit)
      break;
    PolymerRecord r = record;
    for (std::size_t k = 0; k < combo.size(); ++k)
      r.components[k].smiles = combo[k];
    if (seen.insert(assemble_sequence(r, schema)).second)
      out.push_back(std::move(r));
  }
  return out;
}

std::vector<PolymerRecord> augment_train(const std::vector<PolymerRecord> &train,
                                         const DatasetSchema &schema,
                                         std::uint64_t seed,
                                         std::ostream *warnings) {
  std::vector<std::vector<PolymerRecord>> parts(train.size());
  std::vector<std::string> notes(train.size());
  const unsigned workers = std::max(
      1u, std::min<unsigned>(worker_threads(),
                             static_cast<unsigned>(train.size())));

  auto run = [&](unsigned w) {
    for (std::size_t i = w; i < train.size(); i += workers) {
      std::ostringstream note;
      const std::uint64_t s =
          seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(train[i].id);
      parts[i] = augment_record(train[i], schema, s, &note);
      notes[i] = note.str();
    }
  };
  if (workers <= 1) {
    run(0);
  } else {
    std::vector<std::thread> threads;
    for (unsigned w = 0; w < workers; ++w)
      threads.emplace_back(run, w);
    for (std::thread &t: threads)
      t.join();
  }

  std::vector<PolymerRecord> out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (warnings)
      *warnings << notes[i];
    for (PolymerRecord &r: parts[i])
      out.push_back(std::move(r));
  }
  return out;
}

std::vector<PolymerRecord> select_records(const std::vector<PolymerRecord> &all,
                                          const std::vector<int> &ids) {
  std::map<int, const PolymerRecord *> by_id;
  for (const PolymerRecord &r: all)
    by_id[r.id] = &r;
  std::vector<PolymerRecord> out;
  for (int id: ids) {
    auto it = by_id.find(id);
    if (it == by_id.end())
      throw Error("unknown record id " + std::to_string(id));
    out.push_back(*it->second);
  }
  return out;
}

}  // namespace polyseq
