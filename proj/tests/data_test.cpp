//
// PolySeq - Copyright 2026 The PolySeq Authors.
// SPDX-License-Identifier: Apache-2.0
//

#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "polyseq/data.h"
#include "polyseq/error.h"
#include "polyseq/smiles.h"
#include "support.h"

namespace polyseq {
namespace {

DatasetSchema conductivity_schema(AugmentationMode mode = AugmentationMode::kNone,
                                  int limit = 0) {
  DatasetSchema s = DatasetSchema::from_json(nlohmann::json::parse(R"({
    "format": 1,
    "name": "cond",
    "components": [{"smiles": "smiles"}],
    "globals": [{"name": "Tg", "column": "tg", "decimals": 1},
                {"name": "temperature", "column": "temp"}],
    "label": "y",
    "split_column": "year"
  })"));
  s.augmentation = {mode, limit};
  return s;
}

const char *kConductivityCsv =
    "smiles,tg,temp,y,year\n"
    "*CCO*,95.24,25,-3.1,2018\n"
    "*CC(C)O*,,60,-2.5,2019\n"
    "\"*C(Cl)CO*\",-12,80,-4.75,2020\n";

// --- CSV -------------------------------------------------------------------

TEST(Csv, QuotingAndBlankLines) {
  const CsvTable t = parse_csv("a,b\n\"x,1\",\"say \"\"hi\"\"\"\n\n\"multi\nline\",2\n");
  EXPECT_EQ(t.header, (std::vector<std::string> {"a", "b"}));
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0][0], "x,1");
  EXPECT_EQ(t.rows[0][1], "say \"hi\"");
  EXPECT_EQ(t.rows[1][0], "multi\nline");
  EXPECT_EQ(t.lines[0], 2u);
  EXPECT_EQ(t.lines[1], 4u);
}

TEST(Csv, CrlfLineEndings) {
  const CsvTable t = parse_csv("a,b\r\n1,2\r\n");
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_EQ(t.rows[0][1], "2");
}

TEST(Csv, Errors) {
  EXPECT_THROW(parse_csv("a,b\n1\n"), IoError);
  EXPECT_THROW(parse_csv("a,b\n\"1,2\n"), IoError);
}

TEST(Csv, FieldQuotingRoundTrip) {
  const std::vector<std::string> fields = {"plain", "with,comma", "q\"uote", ""};
  const CsvTable t = parse_csv("h1,h2,h3,h4\n" + csv_row(fields));
  EXPECT_EQ(t.rows.at(0), fields);
  EXPECT_EQ(csv_field("abc"), "abc");
  EXPECT_EQ(csv_field("a,b"), "\"a,b\"");
}

// --- loading ---------------------------------------------------------------

TEST(Load, ThreeRecords) {
  const auto records = load_dataset_text(kConductivityCsv, conductivity_schema());
  ASSERT_EQ(records.size(), 3u);
  EXPECT_EQ(records[0].id, 0);
  EXPECT_EQ(records[2].id, 2);
  EXPECT_EQ(records[0].components[0].smiles, "*CCO*");
  EXPECT_EQ(records[0].global_descriptors[0].value, "95.2");
  EXPECT_EQ(records[1].global_descriptors[0].value, std::nullopt);
  EXPECT_EQ(records[2].global_descriptors[0].value, "-12.0");
  EXPECT_EQ(records[2].label, -4.75);
  EXPECT_EQ(records[1].split_value, "2019");
  EXPECT_NE(assemble_sequence(records[1], conductivity_schema()).find("$NAN_Tg$60"),
            std::string::npos);
}

TEST(Load, BadRowsAreCollected) {
  const std::string text = std::string(kConductivityCsv)
                           + "*CC(O*,1,2,3,2021\n"
                           + "*CC*,1,2,oops,2021\n";
  try {
    load_dataset_text(text, conductivity_schema());
    FAIL();
  } catch (const DatasetError &e) {
    ASSERT_EQ(e.errors().size(), 2u);
    EXPECT_EQ(e.errors()[0].line, 5u);
    EXPECT_EQ(e.errors()[0].column, "smiles");
    EXPECT_EQ(e.errors()[1].line, 6u);
    EXPECT_EQ(e.errors()[1].column, "y");
  }
  std::ostringstream warnings;
  const auto kept =
      load_dataset_text(text, conductivity_schema(), {true, &warnings});
  EXPECT_EQ(kept.size(), 3u);
  EXPECT_NE(warnings.str().find("line 5"), std::string::npos);
}

TEST(Load, MissingColumn) {
  try {
    load_dataset_text("smiles,tg,y\n*C*,1,2\n", conductivity_schema());
    FAIL();
  } catch (const DatasetError &e) {
    std::set<std::string> missing;
    for (const RowError &r: e.errors())
      missing.insert(r.column);
    EXPECT_EQ(missing, (std::set<std::string> {"temp", "year"}));
  }
}

TEST(Load, MiniDatasetFromDisk) {
  const DatasetSchema s = DatasetSchema::load(testing::data_dir() / "mini" / "schema.json");
  const auto records = load_dataset(testing::data_dir() / "mini" / "mini_dataset.csv", s);
  EXPECT_EQ(records.size(), 60u);
}

TEST(Load, CsvRoundTrip) {
  const DatasetSchema s = conductivity_schema();
  const auto records = load_dataset_text(kConductivityCsv, s);
  const auto back = load_dataset_text(records_to_csv(records, s), s);
  ASSERT_EQ(back.size(), records.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(assemble_sequence(back[i], s), assemble_sequence(records[i], s));
    EXPECT_EQ(back[i].label, records[i].label);
    EXPECT_EQ(back[i].split_value, records[i].split_value);
  }
}

// --- splits ----------------------------------------------------------------

std::vector<PolymerRecord> numbered(int n) {
  std::vector<PolymerRecord> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    out[i].id = i;
    out[i].split_value = i % 3 == 0 ? "2021" : "2018";
  }
  return out;
}

TEST(Splits, KFoldSizesAndCoverage) {
  const SplitPlan plan {SplitPlan::Kind::kKFold, 5, 42, {}};
  const auto folds = make_splits(numbered(10), plan);
  ASSERT_EQ(folds.size(), 5u);
  std::multiset<int> tested;
  for (const Fold &f: folds) {
    EXPECT_EQ(f.test_ids.size(), 2u);
    EXPECT_EQ(f.train_ids.size(), 8u);
    tested.insert(f.test_ids.begin(), f.test_ids.end());
  }
  EXPECT_EQ(tested.size(), 10u);
  EXPECT_EQ(std::set<int>(tested.begin(), tested.end()).size(), 10u);

  const auto uneven = make_splits(numbered(12), plan);
  EXPECT_EQ(uneven[0].test_ids.size(), 3u);
  EXPECT_EQ(uneven[1].test_ids.size(), 3u);
  EXPECT_EQ(uneven[4].test_ids.size(), 2u);
}

TEST(Splits, SeededAndDeterministic) {
  const SplitPlan a {SplitPlan::Kind::kKFold, 5, 1, {}};
  SplitPlan b = a;
  b.seed = 2;
  const auto fa = make_splits(numbered(30), a);
  EXPECT_EQ(make_splits(numbered(30), a)[3].test_ids, fa[3].test_ids);
  EXPECT_NE(make_splits(numbered(30), b)[0].test_ids, fa[0].test_ids);
}

TEST(Splits, HoldoutByYear) {
  const SplitPlan plan {SplitPlan::Kind::kHoldout, 0, 0,
                        {{"2018", "train"}, {"2021", "test"}}};
  const auto folds = make_splits(numbered(9), plan);
  ASSERT_EQ(folds.size(), 1u);
  EXPECT_EQ(folds[0].test_ids, (std::vector<int> {0, 3, 6}));
  EXPECT_EQ(folds[0].train_ids.size(), 6u);
  const std::string csv = splits_to_csv(folds, plan);
  EXPECT_EQ(csv.substr(0, 30), "record_id,fold\n0,test\n1,train\n");
}

TEST(Splits, Errors) {
  EXPECT_THROW(make_splits(numbered(3), {SplitPlan::Kind::kKFold, 5, 0, {}}),
               EmptySplit);
  EXPECT_THROW(make_splits(numbered(9), {SplitPlan::Kind::kHoldout, 0, 0,
                                         {{"2018", "train"}}}),
               ConfigError);
  EXPECT_THROW(make_splits(numbered(9), {SplitPlan::Kind::kHoldout, 0, 0,
                                         {{"2018", "train"}, {"2021", "train"}}}),
               EmptySplit);
}

// --- augmentation -----------------------------------------------------------

PolymerRecord record_of(const std::string &smiles, double label = 1.5) {
  PolymerRecord r;
  r.id = 7;
  r.components.push_back({smiles, {}});
  r.global_descriptors = {{"Tg", "95.2"}, {"temperature", std::nullopt}};
  r.label = label;
  return r;
}

TEST(Augment, TotalLimit) {
  const DatasetSchema s = conductivity_schema(AugmentationMode::kTotal, 5);
  const PolymerRecord r = record_of("*CC(C)OC(=O)CN*");
  const auto out = augment_record(r, s, 3);
  ASSERT_EQ(out.size(), 5u);
  EXPECT_EQ(out.front().components[0].smiles, r.components[0].smiles);
  std::set<std::string> distinct;
  const std::string canon = smiles::canonicalize(r.components[0].smiles);
  for (const PolymerRecord &v: out) {
    distinct.insert(v.components[0].smiles);
    EXPECT_EQ(smiles::canonicalize(v.components[0].smiles), canon);
    EXPECT_EQ(v.label, r.label);
    EXPECT_EQ(v.id, r.id);
    EXPECT_EQ(v.global_descriptors[0].value, "95.2");
    EXPECT_EQ(v.global_descriptors[1].value, std::nullopt);
  }
  EXPECT_EQ(distinct.size(), 5u);
}

TEST(Augment, SingleAtomHasOneForm) {
  const DatasetSchema s = conductivity_schema(AugmentationMode::kUnlimited);
  EXPECT_EQ(augment_record(record_of("C"), s, 1).size(), 1u);
}

TEST(Augment, NoneModeReturnsRecord) {
  const auto out = augment_record(record_of("*CCO*"), conductivity_schema(), 1);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].components[0].smiles, "*CCO*");
}

TEST(Augment, PerUnitCapsEachUnit) {
  const DatasetSchema s = conductivity_schema(AugmentationMode::kPerUnit, 2);
  // Two units, two variants each.
  const auto out = augment_record(record_of("*CCO*.*CCN*"), s, 1);
  EXPECT_EQ(out.size(), 4u);
  for (const PolymerRecord &v: out) {
    const auto graphs = smiles::parse_smiles(v.components[0].smiles);
    EXPECT_TRUE(testing::isomorphic(graphs, smiles::parse_smiles("*CCO*.*CCN*")));
  }
}

TEST(Augment, SeedDeterminism) {
  const DatasetSchema s = conductivity_schema(AugmentationMode::kTotal, 3);
  const auto records = load_dataset_text(kConductivityCsv, s);
  const auto a = augment_train(records, s, 9);
  const auto b = augment_train(records, s, 9);
  EXPECT_EQ(records_to_csv(a, s), records_to_csv(b, s));
}

TEST(Augment, TrainOnlyNoLeakage) {
  const DatasetSchema s = conductivity_schema(AugmentationMode::kTotal, 4);
  auto records = load_dataset_text(kConductivityCsv, s);
  for (int i = 0; i < 3; ++i) {
    PolymerRecord extra = record_of("*CC(=O)O" + std::string(i + 1, 'C') + "*");
    extra.id = static_cast<int>(records.size());
    records.push_back(extra);
  }
  const auto folds = make_splits(records, {SplitPlan::Kind::kKFold, 3, 5, {}});
  for (const Fold &f: folds) {
    const auto train = augment_train(select_records(records, f.train_ids), s, 1);
    std::set<int> ids;
    for (const PolymerRecord &r: train)
      ids.insert(r.id);
    for (int id: f.test_ids)
      EXPECT_FALSE(ids.count(id)) << "fold " << f.index;
  }
}

TEST(Augment, UnparsableRecordComesBackAlone) {
  const DatasetSchema s = conductivity_schema(AugmentationMode::kTotal, 4);
  std::ostringstream warnings;
  const auto out = augment_record(record_of("*CC(O*"), s, 1, &warnings);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_NE(warnings.str().find("record 7"), std::string::npos);
}

TEST(Select, ListOrder) {
  const auto all = numbered(5);
  const auto picked = select_records(all, {4, 1});
  ASSERT_EQ(picked.size(), 2u);
  EXPECT_EQ(picked[0].id, 4);
  EXPECT_EQ(picked[1].id, 1);
}

}  // namespace
}  // namespace polyseq
