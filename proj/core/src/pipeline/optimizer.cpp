#include "circus/pipeline/optimizer.hpp"

#include <algorithm>
#include <cmath>

#include "circus/error.hpp"

namespace circus::pipeline {

using nlohmann::json;

void FeedbackSpec::validate() const {
  if (observable.empty()) fail(Errc::invalid_argument, "feedback needs an observable");
  if (params.empty()) fail(Errc::invalid_argument, "feedback needs at least one parameter");
  for (const auto& p : params) {
    if (p.name.empty()) fail(Errc::invalid_argument, "parameter without a name");
    if (!std::isfinite(p.lo) || !std::isfinite(p.hi) || p.lo > p.hi) {
      fail(Errc::invalid_argument, "parameter " + p.name + " has an empty range");
    }
    if (p.step && !(*p.step > 0.0)) fail(Errc::invalid_argument, "parameter " + p.name + " step must be positive");
  }
  if (optimizer == OptimizerKind::golden_section && params.size() != 1) {
    fail(Errc::invalid_argument, "golden section searches exactly one parameter");
  }
  if (tolerance < 0.0) fail(Errc::invalid_argument, "tolerance must be non-negative");
}

double cost(const Objective& objective, double observable) {
  switch (objective.kind) {
    case Objective::Kind::minimize: return observable;
    case Objective::Kind::maximize: return -observable;
    case Objective::Kind::target: return std::abs(observable - objective.value);
  }
  return observable;
}

namespace {

double snap(const ParamRange& p, double v) {
  v = std::clamp(v, p.lo, p.hi);
  if (!p.step) return v;
  const double k = std::round((v - p.lo) / *p.step);
  const double kmax = std::floor((p.hi - p.lo) / *p.step);
  return p.lo + std::clamp(k, 0.0, kmax) * *p.step;
}

double center(const ParamRange& p) { return snap(p, 0.5 * (p.lo + p.hi)); }

ParamSet golden_section(const FeedbackSpec& spec, const std::vector<HistoryEntry>& history) {
  const auto& p = spec.params.front();
  if (history.empty()) return {{p.name, center(p)}};

  // Entry 0 is the center probe; the search itself starts at entry 1.
  std::size_t next = 1;
  auto evaluate = [&](double& out) {
    if (next >= history.size()) return false;
    out = cost(spec.objective, history[next++].observable);
    return true;
  };
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = p.lo, b = p.hi;
  double c = b - (b - a) * inv_phi;
  double d = a + (b - a) * inv_phi;
  double fc = 0, fd = 0;
  if (!evaluate(fc)) return {{p.name, snap(p, c)}};
  if (!evaluate(fd)) return {{p.name, snap(p, d)}};
  for (;;) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - (b - a) * inv_phi;
      if (!evaluate(fc)) return {{p.name, snap(p, c)}};
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + (b - a) * inv_phi;
      if (!evaluate(fd)) return {{p.name, snap(p, d)}};
    }
  }
}

ParamSet coordinate_search(const FeedbackSpec& spec, const std::vector<HistoryEntry>& history) {
  const auto n = spec.params.size();
  std::vector<double> x(n), step(n), min_step(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = spec.params[i];
    x[i] = center(p);
    min_step[i] = p.step ? *p.step : std::max((p.hi - p.lo) * 1e-6, 1e-12);
    step[i] = std::max((p.hi - p.lo) / 4.0, min_step[i]);
  }
  auto as_set = [&](const std::vector<double>& v) {
    ParamSet out;
    for (std::size_t i = 0; i < n; ++i) out[spec.params[i].name] = v[i];
    return out;
  };
  if (history.empty()) return as_set(x);

  double fx = cost(spec.objective, history[0].observable);
  std::size_t next = 1;
  for (;;) {
    bool improved = false;
    for (std::size_t i = 0; i < n; ++i) {
      for (double dir : {1.0, -1.0}) {
        auto y = x;
        y[i] = snap(spec.params[i], x[i] + dir * step[i]);
        if (y[i] == x[i]) continue;
        if (next >= history.size()) return as_set(y);
        const double fy = cost(spec.objective, history[next++].observable);
        if (fy < fx) {
          x = y;
          fx = fy;
          improved = true;
          break;
        }
      }
    }
    if (improved) continue;
    bool at_floor = true;
    for (std::size_t i = 0; i < n; ++i) at_floor = at_floor && step[i] <= min_step[i];
    if (at_floor) return as_set(x);
    for (std::size_t i = 0; i < n; ++i) step[i] = std::max(step[i] / 2.0, min_step[i]);
  }
}

}  // namespace

ParamSet propose_parameters(const FeedbackSpec& spec, const std::vector<HistoryEntry>& history) {
  spec.validate();
  if (history.size() >= spec.budget) {
    fail(Errc::optimizer_exhausted, "budget of " + std::to_string(spec.budget) + " experiments spent");
  }
  const bool golden = spec.optimizer == OptimizerKind::golden_section ||
                      (spec.optimizer == OptimizerKind::automatic && spec.params.size() == 1);
  return golden ? golden_section(spec, history) : coordinate_search(spec, history);
}

std::optional<std::size_t> best_entry(const FeedbackSpec& spec, const std::vector<HistoryEntry>& history) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < history.size(); ++i) {
    if (!best || cost(spec.objective, history[i].observable) < cost(spec.objective, history[*best].observable)) {
      best = i;
    }
  }
  return best;
}

bool converged(const FeedbackSpec& spec, const std::vector<HistoryEntry>& history) {
  const auto best = best_entry(spec, history);
  return best && cost(spec.objective, history[*best].observable) <= spec.tolerance;
}

namespace {

std::string_view kind_name(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::automatic: return "auto";
    case OptimizerKind::golden_section: return "golden_section";
    case OptimizerKind::coordinate: return "coordinate";
  }
  return "auto";
}

}  // namespace

json feedback_to_json(const FeedbackSpec& spec) {
  json obj;
  switch (spec.objective.kind) {
    case Objective::Kind::maximize: obj = {{"kind", "maximize"}}; break;
    case Objective::Kind::minimize: obj = {{"kind", "minimize"}}; break;
    case Objective::Kind::target: obj = {{"kind", "target"}, {"value", spec.objective.value}}; break;
  }
  json params = json::array();
  for (const auto& p : spec.params) {
    json jp{{"name", p.name}, {"lo", p.lo}, {"hi", p.hi}};
    if (p.step) jp["step"] = *p.step;
    params.push_back(std::move(jp));
  }
  return {{"observable", spec.observable}, {"objective", obj}, {"optimizer", {{"kind", kind_name(spec.optimizer)}}},
          {"params", params},           {"budget", spec.budget}, {"tolerance", spec.tolerance}};
}

FeedbackSpec feedback_from_json(const json& j) {
  FeedbackSpec spec;
  try {
    spec.observable = j.at("observable").get<std::string>();
    const auto& obj = j.at("objective");
    const auto kind = obj.at("kind").get<std::string>();
    if (kind == "maximize") {
      spec.objective.kind = Objective::Kind::maximize;
    } else if (kind == "minimize") {
      spec.objective.kind = Objective::Kind::minimize;
    } else if (kind == "target") {
      spec.objective = {Objective::Kind::target, obj.at("value").get<double>()};
    } else {
      fail(Errc::schema_violation, "objective.kind: unknown objective " + kind);
    }
    if (j.contains("optimizer")) {
      const auto k = j.at("optimizer").value("kind", std::string("auto"));
      if (k == "auto") {
        spec.optimizer = OptimizerKind::automatic;
      } else if (k == "golden_section") {
        spec.optimizer = OptimizerKind::golden_section;
      } else if (k == "coordinate") {
        spec.optimizer = OptimizerKind::coordinate;
      } else {
        fail(Errc::schema_violation, "optimizer.kind: unknown optimizer " + k);
      }
    }
    for (const auto& p : j.at("params")) {
      ParamRange r{p.at("name").get<std::string>(), p.at("lo").get<double>(), p.at("hi").get<double>(), {}};
      if (p.contains("step")) r.step = p.at("step").get<double>();
      spec.params.push_back(std::move(r));
    }
    spec.budget = j.at("budget").get<std::uint32_t>();
    spec.tolerance = j.value("tolerance", 0.0);
  } catch (const json::exception& e) {
    fail(Errc::schema_violation, std::string("feedback: ") + e.what());
  }
  try {
    spec.validate();
  } catch (const Error& e) {
    fail(Errc::schema_violation, std::string("feedback: ") + e.what());
  }
  return spec;
}

}  // namespace circus::pipeline
