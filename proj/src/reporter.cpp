#include "evalverse/reporter.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

namespace evalverse {

namespace {

constexpr std::array kAllCriteria = {
    Criterion::h6_avg,     Criterion::arc,   Criterion::hellaswag, Criterion::mmlu,
    Criterion::truthfulqa, Criterion::winogrande, Criterion::gsm8k, Criterion::mt_bench,
    Criterion::eq_bench,   Criterion::ifeval,
};

}  // namespace

std::string_view criterion_name(Criterion c) noexcept {
  switch (c) {
    case Criterion::h6_avg: return "h6_avg";
    case Criterion::arc: return "arc";
    case Criterion::hellaswag: return "hellaswag";
    case Criterion::mmlu: return "mmlu";
    case Criterion::truthfulqa: return "truthfulqa";
    case Criterion::winogrande: return "winogrande";
    case Criterion::gsm8k: return "gsm8k";
    case Criterion::mt_bench: return "mt_bench";
    case Criterion::eq_bench: return "eq_bench";
    case Criterion::ifeval: return "ifeval";
  }
  return "?";
}

std::optional<Criterion> parse_criterion(std::string_view name) noexcept {
  for (Criterion c : kAllCriteria) {
    if (criterion_name(c) == name) return c;
  }
  return std::nullopt;
}

std::span<const Criterion> all_criteria() noexcept { return kAllCriteria; }

std::optional<Benchmark> criterion_benchmark(Criterion c) noexcept {
  if (c == Criterion::h6_avg) return std::nullopt;
  return parse_benchmark(criterion_name(c));
}

double h6_average(const std::map<Benchmark, double>& scores) {
  std::string missing;
  double sum = 0.0;
  for (Benchmark b : h6_members()) {
    auto it = scores.find(b);
    if (it == scores.end()) {
      if (!missing.empty()) missing += ", ";
      missing += benchmark_name(b);
    } else {
      sum += it->second;
    }
  }
  if (!missing.empty()) throw Error(Errc::MissingComponent, missing);
  return sum / static_cast<double>(h6_members().size());
}

std::string format_score(double value, int decimals) {
  if (!std::isfinite(value)) return "nan";
  // Round on the decimal expansion so that 2.675 becomes 2.68, as written.
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals + 6, std::fabs(value));
  std::string digits(buf);
  const auto dot = digits.find('.');
  std::string int_part = digits.substr(0, dot);
  std::string frac = digits.substr(dot + 1, static_cast<std::size_t>(decimals));
  const bool round_up = digits[dot + 1 + static_cast<std::size_t>(decimals)] >= '5';
  std::string number = int_part + frac;
  if (round_up) {
    int i = static_cast<int>(number.size()) - 1;
    for (; i >= 0; --i) {
      if (number[static_cast<std::size_t>(i)] == '9') {
        number[static_cast<std::size_t>(i)] = '0';
      } else {
        ++number[static_cast<std::size_t>(i)];
        break;
      }
    }
    if (i < 0) number.insert(number.begin(), '1');
  }
  std::string out = number.substr(0, number.size() - static_cast<std::size_t>(decimals));
  if (decimals > 0) out += "." + number.substr(number.size() - static_cast<std::size_t>(decimals));
  const bool zero = out.find_first_not_of("0.") == std::string::npos;
  if (value < 0 && !zero) out.insert(out.begin(), '-');
  return out;
}

std::vector<int> competition_ranks(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<int> ranks(scores.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    const bool tied = pos > 0 && scores[order[pos]] == scores[order[pos - 1]];
    ranks[order[pos]] = tied ? ranks[order[pos - 1]] : static_cast<int>(pos) + 1;
  }
  return ranks;
}

std::vector<std::string> Report::ordered_models() const {
  std::vector<std::string> out = models;
  std::stable_sort(out.begin(), out.end(), [&](const std::string& a, const std::string& b) {
    const int ra = overall_rank.at(a);
    const int rb = overall_rank.at(b);
    if (ra != rb) return ra < rb;
    return a < b;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Building
// ---------------------------------------------------------------------------

Report build_report(const std::vector<std::string>& models, const std::vector<Criterion>& criteria,
                    std::span<const ScoreRecord> records) {
  if (models.empty()) throw Error(Errc::InvalidArgument, "no models selected");
  if (criteria.empty()) throw Error(Errc::InvalidArgument, "no criteria selected");

  Report report;
  {
    std::set<std::string> seen;
    for (const auto& m : models) {
      if (seen.insert(m).second) report.models.push_back(m);
    }
    std::set<Criterion> seen_c;
    for (Criterion c : criteria) {
      if (seen_c.insert(c).second) report.criteria.push_back(c);
    }
  }

  // Newest record per (model, benchmark), whatever order `records` is in.
  std::map<std::string, std::map<Benchmark, const ScoreRecord*>> latest;
  for (const auto& r : records) {
    auto& slot = latest[r.model][r.benchmark];
    if (slot == nullptr || r.created_at > slot->created_at ||
        (r.created_at == slot->created_at && r.job_id > slot->job_id)) {
      slot = &r;
    }
  }

  for (const auto& model : report.models) {
    auto it = latest.find(model);
    if (it == latest.end()) continue;
    std::map<Benchmark, double> scores;
    for (const auto& [b, r] : it->second) scores.emplace(b, r->score);
    for (Criterion c : report.criteria) {
      if (auto b = criterion_benchmark(c)) {
        if (auto s = scores.find(*b); s != scores.end()) report.cells[model][c] = s->second;
      } else {
        const bool complete = std::all_of(h6_members().begin(), h6_members().end(),
                                          [&](Benchmark m) { return scores.contains(m); });
        if (complete) report.cells[model][c] = h6_average(scores);
      }
    }
  }
  if (report.cells.empty()) throw Error(Errc::NoData, "no results for the selected models and criteria");

  for (Criterion c : report.criteria) {
    std::vector<std::string> present;
    std::vector<double> values;
    for (const auto& model : report.models) {
      auto row = report.cells.find(model);
      if (row == report.cells.end()) continue;
      auto cell = row->second.find(c);
      if (cell == row->second.end()) continue;
      present.push_back(model);
      values.push_back(cell->second);
    }
    const auto ranks = competition_ranks(values);
    for (std::size_t i = 0; i < present.size(); ++i) {
      report.per_criterion_rank[present[i]][c] = ranks[i];
    }
  }

  // Overall: ascending mean of per-criterion ranks, compared exactly as
  // fractions. Models without any cell share the last rank.
  struct MeanRank {
    long sum = 0;
    long count = 0;
  };
  std::vector<std::pair<std::string, MeanRank>> means;
  for (const auto& model : report.models) {
    MeanRank m;
    if (auto it = report.per_criterion_rank.find(model); it != report.per_criterion_rank.end()) {
      for (const auto& [_, r] : it->second) {
        m.sum += r;
        ++m.count;
      }
    }
    means.emplace_back(model, m);
  }
  const auto better = [](const MeanRank& a, const MeanRank& b) {
    if (a.count == 0 || b.count == 0) return a.count != 0 && b.count == 0;
    return a.sum * b.count < b.sum * a.count;
  };
  for (const auto& [model, m] : means) {
    int rank = 1;
    for (const auto& [_, other] : means) {
      if (better(other, m)) ++rank;
    }
    report.overall_rank[model] = rank;
  }

  report.figure = render_figure(report);
  return report;
}

Report build_report(const std::vector<std::string>& models, const std::vector<Criterion>& criteria,
                    const Database& db) {
  ResultQuery q;
  q.models.insert(models.begin(), models.end());
  for (Criterion c : criteria) {
    if (auto b = criterion_benchmark(c)) {
      q.benchmarks.insert(*b);
    } else {
      q.benchmarks.insert(h6_members().begin(), h6_members().end());
    }
  }
  q.latest_only = true;
  if (q.models.empty() || q.benchmarks.empty()) return build_report(models, criteria, {});
  const auto records = db.get_results(q);
  return build_report(models, criteria, records);
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

FigurePayload render_figure(const Report& report) {
  FigurePayload fig;
  const auto rows = report.ordered_models();
  for (Criterion c : report.criteria) {
    FigureSeries series;
    series.criterion = c;
    for (const auto& model : rows) {
      auto row = report.cells.find(model);
      if (row == report.cells.end()) continue;
      auto cell = row->second.find(c);
      if (cell == row->second.end()) continue;
      series.points.push_back({model, cell->second, 0.0});
      series.max = series.points.size() == 1 ? cell->second : std::max(series.max, cell->second);
    }
    for (auto& p : series.points) p.normalized = series.max > 0.0 ? p.value / series.max : 0.0;
    fig.series.push_back(std::move(series));
  }
  return fig;
}

std::string render_table(const Report& report) {
  const auto rows = report.ordered_models();
  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> header{"Model"};
  for (Criterion c : report.criteria) header.emplace_back(criterion_name(c));
  header.emplace_back("Rank");
  grid.push_back(std::move(header));
  for (const auto& model : rows) {
    std::vector<std::string> line{model};
    const auto row = report.cells.find(model);
    for (Criterion c : report.criteria) {
      if (row != report.cells.end()) {
        if (auto cell = row->second.find(c); cell != row->second.end()) {
          line.push_back(format_score(cell->second));
          continue;
        }
      }
      line.emplace_back("-");
    }
    line.push_back(std::to_string(report.overall_rank.at(model)));
    grid.push_back(std::move(line));
  }

  std::vector<std::size_t> width(grid.front().size(), 0);
  for (const auto& line : grid) {
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  }
  std::ostringstream out;
  for (const auto& line : grid) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (i == 0) {
        out << line[i] << std::string(width[i] - line[i].size(), ' ');
      } else {
        out << "  " << std::string(width[i] - line[i].size(), ' ') << line[i];
      }
    }
    out << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

Json report_to_json(const Report& report) {
  Json models = Json::array();
  for (const auto& m : report.models) models.push_back(m);
  Json criteria = Json::array();
  for (Criterion c : report.criteria) criteria.push_back(criterion_name(c));

  Json cells = Json::object();
  Json ranks = Json::object();
  for (const auto& m : report.models) {
    if (auto row = report.cells.find(m); row != report.cells.end()) {
      Json j = Json::object();
      for (Criterion c : report.criteria) {
        if (auto cell = row->second.find(c); cell != row->second.end()) {
          j[std::string(criterion_name(c))] = cell->second;
        }
      }
      cells[m] = std::move(j);
    }
    if (auto row = report.per_criterion_rank.find(m); row != report.per_criterion_rank.end()) {
      Json j = Json::object();
      for (Criterion c : report.criteria) {
        if (auto r = row->second.find(c); r != row->second.end()) {
          j[std::string(criterion_name(c))] = r->second;
        }
      }
      ranks[m] = std::move(j);
    }
  }
  Json overall = Json::object();
  for (const auto& m : report.models) overall[m] = report.overall_rank.at(m);

  Json series = Json::array();
  for (const auto& s : report.figure.series) {
    Json points = Json::array();
    for (const auto& p : s.points) {
      points.push_back(Json{{"model", p.model}, {"value", p.value}, {"normalized", p.normalized}});
    }
    series.push_back(
        Json{{"criterion", criterion_name(s.criterion)}, {"max", s.max}, {"points", std::move(points)}});
  }

  return Json{
      {"models", std::move(models)},
      {"criteria", std::move(criteria)},
      {"cells", std::move(cells)},
      {"per_criterion_rank", std::move(ranks)},
      {"overall_rank", std::move(overall)},
      {"figure", Json{{"kind", report.figure.kind},
                      {"normalization", report.figure.normalization},
                      {"series", std::move(series)}}},
  };
}

Report report_from_json(const Json& j) {
  const auto criterion = [](const std::string& name) {
    auto c = parse_criterion(name);
    if (!c) throw Error(Errc::UnknownCriterion, name);
    return *c;
  };
  try {
    Report r;
    r.models = j.at("models").get<std::vector<std::string>>();
    for (const auto& c : j.at("criteria")) r.criteria.push_back(criterion(c.get<std::string>()));
    for (const auto& [model, row] : j.at("cells").items()) {
      for (const auto& [c, v] : row.items()) r.cells[model][criterion(c)] = v.get<double>();
    }
    for (const auto& [model, row] : j.at("per_criterion_rank").items()) {
      for (const auto& [c, v] : row.items()) r.per_criterion_rank[model][criterion(c)] = v.get<int>();
    }
    for (const auto& [model, v] : j.at("overall_rank").items()) r.overall_rank[model] = v.get<int>();
    const auto& fig = j.at("figure");
    r.figure.kind = fig.at("kind").get<std::string>();
    r.figure.normalization = fig.value("normalization", std::string("per_criterion_max"));
    for (const auto& s : fig.at("series")) {
      FigureSeries series;
      series.criterion = criterion(s.at("criterion").get<std::string>());
      series.max = s.at("max").get<double>();
      for (const auto& p : s.at("points")) {
        series.points.push_back({p.at("model").get<std::string>(), p.at("value").get<double>(),
                                 p.at("normalized").get<double>()});
      }
      r.figure.series.push_back(std::move(series));
    }
    return r;
  } catch (const Json::exception& e) {
    throw Error(Errc::MalformedInput, std::string("report payload: ") + e.what());
  }
}

}  // namespace evalverse
