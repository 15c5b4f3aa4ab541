//
// PolySeq - Copyright 2026 The PolySeq Authors.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef POLYSEQ_DATA_H_
#define POLYSEQ_DATA_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "polyseq/error.h"
#include "polyseq/schema.h"
#include "polyseq/tokenizer.h"

namespace polyseq {

// --- CSV -------------------------------------------------------------------

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> lines;  // 1-based source line of each row
};

/// Comma-separated with RFC 4180 quoting. Blank lines are skipped.
/// Throws IoError on an unterminated quote or a ragged row.
CsvTable parse_csv(std::string_view text);

/// Quotes the field when it contains a comma, quote or newline.
std::string csv_field(std::string_view field);
std::string csv_row(const std::vector<std::string> &fields);

// --- loading ---------------------------------------------------------------

struct RowError {
  std::size_t line = 0;
  std::string column;
  std::string message;
};

class DatasetError: public Error {
public:
  explicit DatasetError(std::vector<RowError> errors);
  const std::vector<RowError> &errors() const { return errors_; }

private:
  std::vector<RowError> errors_;
};

struct LoadOptions {
  bool skip_bad_rows = false;
  std::ostream *warnings = nullptr;
};

/// One record per data row; record ids are 0-based data-row ordinals.
/// Bad rows are collected and raised together as DatasetError unless
/// `skip_bad_rows`, in which case they are reported to `warnings`.
std::vector<PolymerRecord> load_dataset(const std::filesystem::path &path,
                                        const DatasetSchema &schema,
                                        const LoadOptions &options = {});
std::vector<PolymerRecord> load_dataset_text(std::string_view text,
                                             const DatasetSchema &schema,
                                             const LoadOptions &options = {});

/// Inverse of load_dataset for the columns the schema knows about.
std::string records_to_csv(const std::vector<PolymerRecord> &records,
                           const DatasetSchema &schema);

// --- splits ----------------------------------------------------------------

struct SplitPlan {
  enum class Kind { kKFold, kHoldout };
  Kind kind = Kind::kKFold;
  int k = 5;
  std::uint64_t seed = 0;
  /// Holdout: split-column value -> "train" | "test".
  std::map<std::string, std::string> routes;
};

struct Fold {
  int index = 0;
  std::vector<int> train_ids;
  std::vector<int> test_ids;
};

/// K-fold: seeded shuffle, then contiguous slices (the first n % k folds get
/// one extra record). Holdout: routes each record by its split value.
/// Throws EmptySplit when a split comes out empty and ConfigError for an
/// unrouted holdout value.
std::vector<Fold> make_splits(const std::vector<PolymerRecord> &records,
                              const SplitPlan &plan);

/// "record_id,fold" rows; holdout folds print train/test.
std::string splits_to_csv(const std::vector<Fold> &folds,
                          const SplitPlan &plan);

// --- augmentation -----------------------------------------------------------

/// SMILES variants of one record under the schema's augmentation mode. The
/// record itself always comes first; labels and descriptors are copied.
/// Records whose SMILES cannot be enumerated come back alone with a warning.
std::vector<PolymerRecord> augment_record(const PolymerRecord &record,
                                          const DatasetSchema &schema,
                                          std::uint64_t seed,
                                          std::ostream *warnings = nullptr);

/// augment_record over every record (in parallel, POLYSEQ_THREADS), merged
/// in input order. Must only be given training records.
std::vector<PolymerRecord> augment_train(const std::vector<PolymerRecord> &train,
                                         const DatasetSchema &schema,
                                         std::uint64_t seed,
                                         std::ostream *warnings = nullptr);

/// Records whose ids are listed, in list order.
std::vector<PolymerRecord> select_records(const std::vector<PolymerRecord> &all,
                                          const std::vector<int> &ids);

}  // namespace polyseq

#endif  // POLYSEQ_DATA_H_
