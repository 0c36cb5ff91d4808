#include <gtest/gtest.h>

#include <algorithm>
#include <functional>
#include <random>

#include "evalverse/connector.hpp"
#include "evalverse/error.hpp"
#include "evalverse/reporter.hpp"
#include "test_support.hpp"

using namespace evalverse;

namespace {

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return Errc::InvalidArgument;
}

const std::vector<std::string> kChat = {"Mistral 7B Instruct", "Solar 10.7B Instruct", "Yi 34B Chat",
                                        "Mixtral 8x7B Instruct", "Llama 2 70B Chat", "Qwen 1.5 72B Chat"};

std::vector<ScoreRecord> published_records() {
  const auto m = FixtureManifest::load(evalverse::testing::published_path());
  std::vector<ScoreRecord> out;
  for (const auto& [key, e] : m.entries()) {
    ScoreRecord r;
    r.model = key.first;
    r.benchmark = key.second;
    r.score = e.score;
    r.sample_count = e.sample_count;
    r.settings = EvalSettings{}.resolved_for(key.second);
    r.job_id = "published";
    r.created_at = parse_rfc3339("2024-04-15T00:00:00Z");
    out.push_back(r);
  }
  return out;
}

ScoreRecord rec(std::string model, Benchmark b, double score) {
  ScoreRecord r;
  r.model = std::move(model);
  r.benchmark = b;
  r.score = score;
  r.settings = EvalSettings{}.resolved_for(b);
  r.job_id = "j";
  return r;
}

std::map<Benchmark, double> h6(const std::vector<double>& v) {
  const auto members = h6_members();
  std::map<Benchmark, double> out;
  for (std::size_t i = 0; i < v.size(); ++i) out[members[i]] = v[i];
  return out;
}

// rank_i = 1 + number of strictly greater scores.
std::vector<int> brute_ranks(const std::vector<double>& s) {
  std::vector<int> out;
  for (const double x : s) out.push_back(1 + static_cast<int>(std::count_if(s.begin(), s.end(), [&](double y) { return y > x; })));
  return out;
}

}  // namespace

TEST(H6, SolarAverage) {
  const double v = h6_average(h6({71.42, 88.20, 65.28, 71.71, 83.19, 67.40}));
  // Hundredths: 7142+8820+6528+7171+8319+6740 = 44720; 44720/6 = 7453.33...
  EXPECT_NEAR(v, 44720.0 / 600.0, 1e-12);
  EXPECT_EQ(format_score(v), "74.53");
}

TEST(H6, MistralRoundingDiscrepancy) {
  const double v = h6_average(h6({63.65, 84.63, 59.10, 66.81, 78.93, 41.85}));
  EXPECT_NEAR(v, 39497.0 / 600.0, 1e-12);
  EXPECT_EQ(format_score(v), "65.83");
  EXPECT_NEAR(v, 65.82, 0.02);
}

TEST(H6, EqualScores) { EXPECT_EQ(h6_average(h6({50, 50, 50, 50, 50, 50})), 50.0); }

TEST(H6, MissingComponentsNamed) {
  auto scores = h6({1, 2, 3, 4, 5, 6});
  scores.erase(Benchmark::gsm8k);
  scores.erase(Benchmark::arc);
  try {
    h6_average(scores);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::MissingComponent);
    EXPECT_NE(std::string(e.what()).find("gsm8k"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("arc"), std::string::npos);
  }
}

TEST(H6, PermutationInvariant) {
  std::mt19937_64 rng(51);
  for (int t = 0; t < 500; ++t) {
    std::vector<double> v(6);
    for (auto& x : v) x = std::uniform_real_distribution<double>(0, 100)(rng);
    const double base = h6_average(h6(v));
    std::shuffle(v.begin(), v.end(), rng);
    EXPECT_NEAR(h6_average(h6(v)), base, 1e-12);
    long double sum = 0;
    for (const double x : v) sum += x;
    EXPECT_NEAR(base, static_cast<double>(sum / 6), 1e-12);
  }
}

TEST(Format, HalfUp) {
  EXPECT_EQ(format_score(2.675), "2.68");
  EXPECT_EQ(format_score(0.125), "0.13");
  EXPECT_EQ(format_score(1.005), "1.01");
  EXPECT_EQ(format_score(8.347), "8.35");
  EXPECT_EQ(format_score(7.6), "7.60");
  EXPECT_EQ(format_score(0.5370, 4), "0.5370");
  EXPECT_EQ(format_score(100), "100.00");
  EXPECT_EQ(format_score(0), "0.00");
}

TEST(Ranks, Examples) {
  EXPECT_EQ(competition_ranks(std::vector<double>{5}), (std::vector<int>{1}));
  EXPECT_EQ(competition_ranks(std::vector<double>{3, 3, 1}), (std::vector<int>{1, 1, 3}));
  EXPECT_EQ(competition_ranks(std::vector<double>{1, 2, 2, 3}), (std::vector<int>{4, 2, 2, 1}));
}

TEST(Ranks, BruteForceOracle) {
  std::mt19937_64 rng(53);
  for (int t = 0; t < 2000; ++t) {
    std::vector<double> s(1 + rng() % 9);
    for (auto& x : s) x = static_cast<double>(rng() % 5);  // plenty of ties
    EXPECT_EQ(competition_ranks(s), brute_ranks(s));
  }
}

TEST(Report, MtBenchRankingFromPublished) {
  const auto records = published_records();
  const auto r = build_report(kChat, {Criterion::mt_bench}, records);
  const std::vector<std::string> expected = {"Qwen 1.5 72B Chat",   "Mixtral 8x7B Instruct", "Yi 34B Chat",
                                             "Mistral 7B Instruct", "Solar 10.7B Instruct",  "Llama 2 70B Chat"};
  EXPECT_EQ(r.ordered_models(), expected);
  for (std::size_t i = 0; i < expected.size(); ++i) {
    EXPECT_EQ(r.per_criterion_rank.at(expected[i]).at(Criterion::mt_bench), static_cast<int>(i + 1));
    EXPECT_EQ(r.overall_rank.at(expected[i]), static_cast<int>(i + 1));
  }
}

TEST(Report, H6CellsFromPublished) {
  const auto r = build_report({"Solar 10.7B Instruct", "Mistral 7B Instruct"}, {Criterion::h6_avg}, published_records());
  EXPECT_NEAR(r.cells.at("Solar 10.7B Instruct").at(Criterion::h6_avg), 74.53, 0.005);
  EXPECT_NEAR(r.cells.at("Mistral 7B Instruct").at(Criterion::h6_avg), 65.82, 0.02);
}

TEST(Report, SingleCell) {
  const std::vector<ScoreRecord> records = {rec("m", Benchmark::arc, 50)};
  const auto r = build_report({"m"}, {Criterion::arc}, records);
  EXPECT_EQ(r.per_criterion_rank.at("m").at(Criterion::arc), 1);
  EXPECT_EQ(r.overall_rank.at("m"), 1);
  EXPECT_EQ(render_table(r), "Model    arc  Rank\nm      50.00     1\n");
}

TEST(Report, TiesShareRank) {
  const std::vector<ScoreRecord> records = {rec("a", Benchmark::arc, 50), rec("b", Benchmark::arc, 50),
                                            rec("c", Benchmark::arc, 40)};
  const auto r = build_report({"c", "b", "a"}, {Criterion::arc}, records);
  EXPECT_EQ(r.per_criterion_rank.at("a").at(Criterion::arc), 1);
  EXPECT_EQ(r.per_criterion_rank.at("b").at(Criterion::arc), 1);
  EXPECT_EQ(r.per_criterion_rank.at("c").at(Criterion::arc), 3);
  EXPECT_EQ(r.ordered_models(), (std::vector<std::string>{"a", "b", "c"}));
}

TEST(Report, OverallIsMeanOfRanks) {
  // a: ranks 1,3 (mean 2); b: 2,1 (1.5); c: 3,2 (2.5). Raw-score mean would favour a.
  const std::vector<ScoreRecord> records = {
      rec("a", Benchmark::arc, 99), rec("b", Benchmark::arc, 50), rec("c", Benchmark::arc, 40),
      rec("a", Benchmark::mt_bench, 1), rec("b", Benchmark::mt_bench, 9), rec("c", Benchmark::mt_bench, 5)};
  const auto r = build_report({"a", "b", "c"}, {Criterion::arc, Criterion::mt_bench}, records);
  EXPECT_EQ(r.overall_rank.at("b"), 1);
  EXPECT_EQ(r.overall_rank.at("a"), 2);
  EXPECT_EQ(r.overall_rank.at("c"), 3);
}

TEST(Report, AbsentCellsRenderDash) {
  const auto r = build_report({"Mistral 7B", "Mistral 7B Instruct"}, {Criterion::mt_bench, Criterion::arc},
                              published_records());
  EXPECT_FALSE(r.cells.at("Mistral 7B").contains(Criterion::mt_bench));
  const auto table = render_table(r);
  EXPECT_EQ(table,
            "Model                mt_bench    arc  Rank\n"
            "Mistral 7B Instruct      7.60  63.65     1\n"
            "Mistral 7B                  -  61.43     2\n");
}

TEST(Report, FigureNormalization) {
  const auto r = build_report(kChat, {Criterion::mt_bench, Criterion::ifeval}, published_records());
  const auto fig = render_figure(r);
  EXPECT_EQ(fig.kind, "grouped_bar");
  EXPECT_EQ(fig.normalization, "per_criterion_max");
  ASSERT_EQ(fig.series.size(), 2u);
  for (const auto& s : fig.series) {
    EXPECT_EQ(s.points.size(), 6u);
    double top = 0;
    for (const auto& p : s.points) {
      EXPECT_GE(p.normalized, 0.0);
      EXPECT_LE(p.normalized, 1.0);
      EXPECT_DOUBLE_EQ(p.normalized, p.value / s.max);
      top = std::max(top, p.normalized);
    }
    EXPECT_EQ(top, 1.0);
  }
  EXPECT_EQ(fig, r.figure);
}

TEST(Report, Errors) {
  const auto records = published_records();
  EXPECT_EQ(code_of([&] { build_report({}, {Criterion::arc}, records); }), Errc::InvalidArgument);
  EXPECT_EQ(code_of([&] { build_report({"x"}, {}, records); }), Errc::InvalidArgument);
  EXPECT_EQ(code_of([&] { build_report({"nobody"}, {Criterion::arc}, records); }), Errc::NoData);
  EXPECT_EQ(code_of([&] { build_report({"Mistral 7B"}, {Criterion::mt_bench}, records); }), Errc::NoData);
}

TEST(Report, UsesLatestRecord) {
  auto old_rec = rec("m", Benchmark::arc, 10);
  old_rec.created_at = parse_rfc3339("2024-01-01T00:00:00Z");
  auto new_rec = rec("m", Benchmark::arc, 20);
  new_rec.created_at = parse_rfc3339("2024-02-01T00:00:00Z");
  new_rec.job_id = "k";
  const std::vector<ScoreRecord> records = {new_rec, old_rec};
  EXPECT_EQ(build_report({"m"}, {Criterion::arc}, records).cells.at("m").at(Criterion::arc), 20);
}

TEST(Report, FromDatabaseEqualsPure) {
  evalverse::testing::TempDir dir;
  Database db(dir.path(), {false});
  const auto records = published_records();
  for (const auto& r : records) db.put_result(r);
  const std::vector<Criterion> criteria(all_criteria().begin(), all_criteria().end());
  const auto models = db.list_models();
  const auto a = build_report(models, criteria, db);
  EXPECT_EQ(a, build_report(models, criteria, records));
  EXPECT_EQ(a, build_report(models, criteria, db));
}

TEST(Report, JsonRoundTrip) {
  const std::vector<Criterion> criteria(all_criteria().begin(), all_criteria().end());
  std::vector<std::string> models = kChat;
  models.push_back("Qwen 1.5 72B");
  const auto r = build_report(models, criteria, published_records());
  const auto j = report_to_json(r);
  EXPECT_EQ(report_from_json(Json::parse(j.dump())), r);
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  EXPECT_EQ(keys, (std::vector<std::string>{"models", "criteria", "cells", "per_criterion_rank", "overall_rank",
                                            "figure"}));
  EXPECT_EQ(j["figure"]["kind"], "grouped_bar");
}

TEST(Report, RandomTablesInvariants) {
  std::mt19937_64 rng(57);
  const std::vector<Benchmark> benches = {Benchmark::arc, Benchmark::mmlu, Benchmark::mt_bench, Benchmark::ifeval};
  for (int t = 0; t < 300; ++t) {
    std::vector<ScoreRecord> records;
    std::vector<std::string> models;
    const int n = 1 + static_cast<int>(rng() % 7);
    for (int i = 0; i < n; ++i) models.push_back("m" + std::to_string(i));
    for (const auto& m : models) {
      for (const auto b : benches) {
        if (rng() % 4 == 0) continue;
        const auto scale = score_scale(b);
        const double step = (scale.max - scale.min) / 4;
        records.push_back(rec(m, b, scale.min + step * static_cast<double>(rng() % 5)));
      }
    }
    const std::vector<Criterion> criteria = {Criterion::arc, Criterion::mmlu, Criterion::mt_bench, Criterion::ifeval};
    Report r;
    try {
      r = build_report(models, criteria, records);
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::NoData);
      EXPECT_TRUE(records.empty());
      continue;
    }
    for (const auto c : criteria) {
      std::vector<std::string> present;
      std::vector<double> values;
      for (const auto& m : models) {
        if (auto it = r.cells[m].find(c); it != r.cells[m].end()) {
          present.push_back(m);
          values.push_back(it->second);
        }
      }
      const auto oracle = brute_ranks(values);
      for (std::size_t i = 0; i < present.size(); ++i) {
        EXPECT_EQ(r.per_criterion_rank.at(present[i]).at(c), oracle[i]);
      }
    }
    // Argmax invariance: scaling one criterion's scores keeps its ranks.
    auto scaled = records;
    for (auto& s : scaled) {
      if (s.benchmark == Benchmark::arc) s.score *= 0.37;
    }
    const auto r2 = build_report(models, criteria, scaled);
    EXPECT_EQ(r2.per_criterion_rank, r.per_criterion_rank);
    EXPECT_EQ(r2.overall_rank, r.overall_rank);
    // Overall ranks follow competition ranking over ordered rows.
    const auto rows = r.ordered_models();
    for (std::size_t i = 1; i < rows.size(); ++i) {
      EXPECT_LE(r.overall_rank.at(rows[i - 1]), r.overall_rank.at(rows[i]));
      if (r.overall_rank.at(rows[i - 1]) == r.overall_rank.at(rows[i])) {
        EXPECT_LT(rows[i - 1], rows[i]);
      }
    }
    if (!rows.empty()) {
      EXPECT_EQ(r.overall_rank.at(rows.front()), 1);
    }
  }
}

TEST(Criteria, Names) {
  EXPECT_EQ(all_criteria().size(), 10u);
  for (const auto c : all_criteria()) EXPECT_EQ(parse_criterion(criterion_name(c)), c);
  EXPECT_FALSE(parse_criterion("bogus").has_value());
  EXPECT_FALSE(criterion_benchmark(Criterion::h6_avg).has_value());
  EXPECT_EQ(criterion_benchmark(Criterion::mmlu), Benchmark::mmlu);
}
