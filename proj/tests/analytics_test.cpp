#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <random>

#include "aupipe/analytics/pain.hpp"

using namespace aupipe;
using namespace std::chrono_literals;

namespace {

IntensityVector iv(int au4, int au6, int au7, int au9, int au10, int au43) {
  return {{4, au4}, {6, au6}, {7, au7}, {9, au9}, {10, au10}, {43, au43}};
}

// Written out with comparisons rather than std::max.
int brute_pspi(int au4, int au6, int au7, int au9, int au10, int au43) {
  int s = au4 + au43;
  s += au6 >= au7 ? au6 : au7;
  s += au9 >= au10 ? au9 : au10;
  return s;
}

Timestamp at(const std::string& hhmmss) { return parse_time("2024-03-01T" + hhmmss + "Z"); }

LabeledFrame lf(const std::string& id, const std::string& patient, Timestamp t, std::map<int, bool> labels) {
  return {{id, patient, t, {}, LandmarkStatus::unknown}, std::move(labels)};
}

}  // namespace

TEST(Pspi, WorkedValues) {
  EXPECT_EQ(pspi(iv(0, 0, 0, 0, 0, 0)), 0);
  EXPECT_EQ(pspi(iv(5, 5, 5, 5, 5, 1)), 16);
  EXPECT_EQ(pspi(iv(5, 5, 3, 0, 2, 1)), 13);
}

TEST(Pspi, RejectsMissingExtraAndOutOfRange) {
  auto v = iv(1, 1, 1, 1, 1, 1);
  v.erase(9);
  EXPECT_THROW(pspi(v), ValidationError);
  v = iv(1, 1, 1, 1, 1, 1);
  v[25] = 1;
  EXPECT_THROW(pspi(v), ValidationError);
  EXPECT_THROW(pspi(iv(6, 0, 0, 0, 0, 0)), ValidationError);
  EXPECT_THROW(pspi(iv(0, 0, 0, 0, -1, 0)), ValidationError);
  EXPECT_THROW(pspi(iv(0, 0, 0, 0, 0, 2)), ValidationError);
}

TEST(Pspi, ExhaustiveRangeMonotonicityAndOracle) {
  int lo = 100, hi = -100;
  std::size_t combos = 0;
  for (int a = 0; a <= 5; ++a)
    for (int b = 0; b <= 5; ++b)
      for (int c = 0; c <= 5; ++c)
        for (int d = 0; d <= 5; ++d)
          for (int e = 0; e <= 5; ++e)
            for (int f = 0; f <= 1; ++f) {
              ++combos;
              const int s = pspi(iv(a, b, c, d, e, f));
              ASSERT_EQ(s, brute_pspi(a, b, c, d, e, f));
              lo = std::min(lo, s);
              hi = std::max(hi, s);
              const std::array<int, 6> x{a, b, c, d, e, f};
              for (std::size_t k = 0; k < 6; ++k) {
                if (x[k] == (k == 5 ? 1 : 5)) continue;
                auto y = x;
                ++y[k];
                ASSERT_LE(s, pspi(iv(y[0], y[1], y[2], y[3], y[4], y[5])));
              }
            }
  EXPECT_EQ(combos, 6u * 6 * 6 * 6 * 6 * 2);
  EXPECT_EQ(lo, 0);
  EXPECT_EQ(hi, 16);
}

TEST(Dvprs, BucketsPartitionZeroToTen) {
  EXPECT_EQ(dvprs_category(4), PainCategory::mild);
  EXPECT_EQ(dvprs_category(5), PainCategory::moderate);
  EXPECT_EQ(dvprs_category(7), PainCategory::high);
  std::map<PainCategory, std::vector<int>> pre;
  for (int s = 0; s <= 10; ++s) pre[dvprs_category(s)].push_back(s);
  EXPECT_EQ(pre[PainCategory::mild], (std::vector<int>{0, 1, 2, 3, 4}));
  EXPECT_EQ(pre[PainCategory::moderate], (std::vector<int>{5, 6}));
  EXPECT_EQ(pre[PainCategory::high], (std::vector<int>{7, 8, 9, 10}));
  EXPECT_THROW(dvprs_category(-1), ValidationError);
  EXPECT_THROW(dvprs_category(11), ValidationError);
}

TEST(Association, CountsPerCategory) {
  std::vector<LabeledFrame> frames;
  for (int i = 0; i < 8; ++i)
    frames.push_back(lf("m" + std::to_string(i), "p1", at("10:00:00") + std::chrono::minutes(i), {{25, i < 3}, {43, true}}));
  frames.push_back(lf("far", "p1", at("12:00:00"), {{25, true}}));
  std::vector<PainReport> reports{{"p1", at("10:30:00"), 6}};
  auto t = association_table(frames, reports, {25, 43});
  ASSERT_EQ(t.rows.size(), 6u);
  const auto& r = t.at(25, PainCategory::moderate);
  EXPECT_EQ(r.present_count, 3u);
  EXPECT_EQ(r.denominator, 8u);
  EXPECT_DOUBLE_EQ(*r.percentage(), 37.5);
  EXPECT_DOUBLE_EQ(*t.at(43, PainCategory::moderate).percentage(), 100.0);
  EXPECT_EQ(t.at(25, PainCategory::mild).denominator, 0u);
  EXPECT_FALSE(t.at(25, PainCategory::mild).percentage().has_value());

  const auto csv = association_csv(t);
  EXPECT_NE(csv.find("25,moderate,3,8,37.5\n"), std::string::npos) << csv;
  EXPECT_NE(csv.find("25,mild,0,0,\n"), std::string::npos) << csv;
  nlohmann::json j = t;
  EXPECT_TRUE(j[0]["percentage"].is_null());
  EXPECT_EQ(j[1]["percentage"], 37.5);
}

TEST(Association, PermutationAndDuplicationInvariant) {
  std::mt19937_64 rng(5);
  std::bernoulli_distribution coin(0.4);
  std::vector<LabeledFrame> frames;
  for (int i = 0; i < 40; ++i)
    frames.push_back(lf("f" + std::to_string(i), i % 2 ? "a" : "b", at("09:00:00") + std::chrono::minutes(3 * i),
                        {{25, coin(rng)}, {26, coin(rng)}}));
  std::vector<PainReport> reports{{"a", at("10:00:00"), 2}, {"b", at("10:30:00"), 8}, {"a", at("11:00:00"), 5}};
  const auto base = nlohmann::json(association_table(frames, reports, {25, 26}));
  auto shuffled = frames;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  EXPECT_EQ(nlohmann::json(association_table(shuffled, reports, {25, 26})), base);
  auto doubled = frames;
  for (const auto& f : frames) {
    auto copy = f;
    copy.frame.frame_id += "_dup";
    doubled.push_back(copy);
  }
  auto d = association_table(doubled, reports, {25, 26});
  auto b = association_table(frames, reports, {25, 26});
  for (std::size_t i = 0; i < b.rows.size(); ++i) {
    EXPECT_EQ(d.rows[i].denominator, 2 * b.rows[i].denominator);
    EXPECT_EQ(d.rows[i].percentage(), b.rows[i].percentage());
  }
}

TEST(Association, OverlappingReportsCountPerReportByDefault) {
  std::vector<LabeledFrame> frames{lf("x", "p", at("10:00:00"), {{25, true}}), lf("y", "p", at("10:40:00"), {{25, false}})};
  std::vector<PainReport> reports{{"p", at("10:10:00"), 1}, {"p", at("10:20:00"), 3}};
  auto per_report = association_table(frames, reports, {25});
  EXPECT_EQ(per_report.at(25, PainCategory::mild).denominator, 4u);
  AssociationOptions once;
  once.once_per_category = true;
  EXPECT_EQ(association_table(frames, reports, {25}, once).at(25, PainCategory::mild).denominator, 2u);
  EXPECT_THROW(association_table(frames, {{"p", at("10:00:00"), 12}}, {25}), ValidationError);
}

TEST(Association, BuildsFromTheAnnotationStore) {
  std::vector<FrameRecord> catalogue{{"a", "p", at("10:00:00"), {}, LandmarkStatus::unknown},
                                     {"b", "p", at("10:05:00"), {}, LandmarkStatus::unknown}};
  AnnotationStore store(catalogue);
  store.upsert({"a", "ann", {{25, {true, {}}}}, at("12:00:00")});
  auto frames = labeled_frames(store);
  ASSERT_EQ(frames.size(), 1u);
  auto t = association_table(frames, {{"p", at("10:00:00"), 9}}, {25});
  EXPECT_EQ(t.at(25, PainCategory::high).present_count, 1u);
  EXPECT_EQ(t.at(25, PainCategory::high).denominator, 1u);
}
