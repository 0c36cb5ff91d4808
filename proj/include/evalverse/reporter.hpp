#pragma once

// Aggregation over stored results: H6 averages, per-criterion competition
// ranks, the overall ranking, and the table / grouped-bar payloads built
// from them.

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "evalverse/core.hpp"
#include "evalverse/database.hpp"
#include "evalverse/serialization.hpp"

namespace evalverse {

enum class Criterion {
  h6_avg,
  arc,
  hellaswag,
  mmlu,
  truthfulqa,
  winogrande,
  gsm8k,
  mt_bench,
  eq_bench,
  ifeval,
};

std::string_view criterion_name(Criterion c) noexcept;
std::optional<Criterion> parse_criterion(std::string_view name) noexcept;
std::span<const Criterion> all_criteria() noexcept;
// The stored benchmark behind a criterion; nullopt for derived h6_avg.
std::optional<Benchmark> criterion_benchmark(Criterion c) noexcept;

// Arithmetic mean of the six H6 members at full precision. Throws
// MissingComponent naming the absent members.
double h6_average(const std::map<Benchmark, double>& scores);

// Fixed-point rendering, rounding half away from zero at `decimals` places.
std::string format_score(double value, int decimals = 2);

// Competition ranks ("1224") for scores where higher is better.
std::vector<int> competition_ranks(std::span<const double> scores);

struct FigurePoint {
  std::string model;
  double value = 0.0;
  double normalized = 0.0;  // value / series max

  friend bool operator==(const FigurePoint&, const FigurePoint&) = default;
};

struct FigureSeries {
  Criterion criterion = Criterion::h6_avg;
  double max = 0.0;
  std::vector<FigurePoint> points;  // one per present cell, in row order

  friend bool operator==(const FigureSeries&, const FigureSeries&) = default;
};

struct FigurePayload {
  std::string kind = "grouped_bar";
  std::string normalization = "per_criterion_max";
  std::vector<FigureSeries> series;

  friend bool operator==(const FigurePayload&, const FigurePayload&) = default;
};

struct Report {
  std::vector<std::string> models;
  std::vector<Criterion> criteria;
  std::map<std::string, std::map<Criterion, double>> cells;
  std::map<std::string, std::map<Criterion, int>> per_criterion_rank;
  std::map<std::string, int> overall_rank;
  FigurePayload figure;

  // Row order: overall rank, then model string.
  std::vector<std::string> ordered_models() const;

  friend bool operator==(const Report&, const Report&) = default;
};

// Pure aggregation over latest records. Throws NoData when no selected model
// has a value for any selected criterion, InvalidArgument on empty selections.
Report build_report(const std::vector<std::string>& models, const std::vector<Criterion>& criteria,
                    std::span<const ScoreRecord> records);
Report build_report(const std::vector<std::string>& models, const std::vector<Criterion>& criteria,
                    const Database& db);

// Columns: Model, one per criterion, Rank. Absent cells print "-".
std::string render_table(const Report& report);
FigurePayload render_figure(const Report& report);

// {"models","criteria","cells","per_criterion_rank","overall_rank","figure"}
Json report_to_json(const Report& report);
Report report_from_json(const Json& j);

}  // namespace evalverse
