#include "cvbell/breeding.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "cvbell/optimize.hpp"

namespace cvbell {

double Schedule::width(int stage) const {
  if (!widths.empty()) {
    require(stage < static_cast<int>(widths.size()), "schedule has no width for stage " + std::to_string(stage));
    return widths[static_cast<std::size_t>(stage)];
  }
  return first_width * std::pow(ratio, stage);
}

HeraldWindow Schedule::single_window(int stage, double dx) const {
  const double w = width(stage);
  if (w <= dx || nodes == 1) return HeraldWindow::single(0.0, std::max(w, dx), 1);
  return HeraldWindow::single(0.0, w, nodes);
}

HeraldWindow Schedule::periodic_window(int stage, double dx, double spacing, double offset) const {
  const double w = width(stage);
  if (w <= dx || nodes == 1) return HeraldWindow::periodic(spacing, offset, std::max(w, dx), 1);
  return HeraldWindow::periodic(spacing, offset, w, nodes);
}

BreedingPlan BreedingPlan::cat(int p, const Schedule& schedule, double dx) {
  require(p >= 0, "stage count must be non-negative");
  BreedingPlan plan;
  plan.kind = PlanKind::cat;
  plan.target_n = 1 << p;
  for (int l = 0; l < p; ++l) plan.stages.push_back(schedule.single_window(l, dx));
  return plan;
}

BreedingPlan BreedingPlan::comb(int p_prime, double a0, const Schedule& schedule, double dx, LogicalBit final_bit) {
  require(p_prime >= 1, "comb breeding needs at least one stage");
  require(a0 > 0, "seed spacing must be positive");
  BreedingPlan plan;
  plan.kind = PlanKind::comb;
  plan.p_prime = p_prime;
  plan.a0 = a0;
  plan.final_bit = final_bit;
  for (int l = 0; l < p_prime; ++l) {
    const double spacing = a0 * std::pow(2.0, (l + 1) / 2.0);
    const bool last = l == p_prime - 1;
    const double offset = last && final_bit == LogicalBit::one ? spacing / 2 : 0.0;
    plan.stages.push_back(schedule.periodic_window(l, dx, spacing, offset));
  }
  return plan;
}

double BreedingPlan::final_spacing() const { return a0 * std::pow(2.0, p_prime / 2.0); }

ResourceLedger ResourceLedger::single_photon() { return {}; }

ResourceLedger ResourceLedger::merge(const ResourceLedger& a, const ResourceLedger& b, double probability) {
  return combine({a, b}, probability);
}

ResourceLedger ResourceLedger::combine(const std::vector<ResourceLedger>& parts, double probability) {
  require(probability > 0 && probability <= 1 + 1e-12, "stage probability must lie in (0, 1]");
  ResourceLedger out;
  out.expected_ = 0;
  out.minimal_ = 0;
  for (const auto& part : parts) {
    out.expected_ += part.expected_;
    out.minimal_ += part.minimal_;
    if (part.stages_.size() > out.stages_.size()) out.stages_ = part.stages_;
  }
  out.expected_ /= probability;
  out.stages_.push_back(probability);
  return out;
}

namespace {

constexpr double kMinStageProbability = 1e-9;

HeraldOutcome<double> run_stage(const Kernel& a, const Kernel& b, const HeraldWindow& w, int stage,
                                CompressionOptions options) {
  auto h = herald_mix(a, b, w, options);
  if (h.probability < kMinStageProbability)
    throw PreconditionError("breeding plan infeasible: stage " + std::to_string(stage) + " probability " +
                            std::to_string(h.probability));
  return h;
}

}  // namespace

BreedResult breed_cat(const BreedingPlan& plan, const Grid& grid, CompressionOptions options) {
  require(plan.kind == PlanKind::cat, "breed_cat needs a cat plan");
  BreedResult r{Kernel(fock(1, grid)), ResourceLedger::single_photon()};
  for (std::size_t l = 0; l < plan.stages.size(); ++l) {
    auto h = run_stage(r.state, r.state, plan.stages[l], static_cast<int>(l), options);
    r.ledger = ResourceLedger::merge(r.ledger, r.ledger, h.probability);
    r.state = std::move(h.state);
  }
  return r;
}

BreedResult breed_n(int n, const Schedule& schedule, const Grid& grid, CompressionOptions options) {
  require(n >= 1, "photon number must be at least one");
  const double dx = grid.dx();
  BreedResult level{Kernel(fock(1, grid)), ResourceLedger::single_photon()};
  std::optional<BreedResult> acc;
  for (int k = 0; (n >> k) != 0; ++k) {
    if ((n >> k) & 1) {
      if (!acc) {
        acc = level;
      } else {
        auto h = run_stage(acc->state, level.state, schedule.single_window(k, dx), k, options);
        acc = BreedResult{std::move(h.state), ResourceLedger::merge(acc->ledger, level.ledger, h.probability)};
      }
    }
    if ((n >> (k + 1)) != 0) {
      auto h = run_stage(level.state, level.state, schedule.single_window(k, dx), k, options);
      level = BreedResult{std::move(h.state), ResourceLedger::merge(level.ledger, level.ledger, h.probability)};
    }
  }
  return *acc;
}

BreedResult breed_comb(const BreedingPlan& plan, const BreedResult& input_cat, const Grid& grid,
                       CompressionOptions options) {
  require(plan.kind == PlanKind::comb, "breed_comb needs a comb plan");
  require_same_grid(input_cat.state.grid(), grid);
  BreedResult r = input_cat;
  for (std::size_t l = 0; l < plan.stages.size(); ++l) {
    auto h = run_stage(r.state, r.state, plan.stages[l], static_cast<int>(l), options);
    r.ledger = ResourceLedger::merge(r.ledger, r.ledger, h.probability);
    r.state = std::move(h.state);
  }
  return r;
}

Wave breeding_limit(int n, const Grid& grid) {
  require(n >= 1, "photon number must be at least one");
  const double root = std::sqrt(static_cast<double>(n));
  CVector<double> v(grid.size());
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    const double y = grid.x(i) / root;
    v[i] = std::pow(y * std::exp(-y * y / 2), n);
  }
  return normalize(Wave(grid, std::move(v)));
}

double comb_seed_spacing(double alpha, double s_prime) {
  return std::numbers::pi / (std::numbers::sqrt2 * s_prime * alpha);
}

FidelityFit fit_nearest_scs(const Kernel& state, std::optional<double> photons) {
  CatParams seed;
  seed.parity = parity_overlap(state) >= 0 ? Parity::even : Parity::odd;
  seed.frame = CatFrame::position;
  seed.s_prime = std::numbers::sqrt2;
  seed.alpha = photons ? std::sqrt(*photons) : std::sqrt(std::max(2 * mean_photon(state), 0.05));
  return fit_nearest_scs(state, seed);
}

FidelityFit fit_nearest_scs(const Kernel& state, const CatParams& seed) {
  require(seed.alpha > 0 && seed.s_prime > 0, "fit seed must be positive");
  const Grid& g = state.grid();
  auto params_of = [&](const Eigen::VectorXd& u) {
    CatParams c = seed;
    c.alpha = std::exp(u[0]);
    c.s_prime = std::exp(u[1]);
    return c;
  };
  auto objective = [&](const Eigen::VectorXd& u) {
    try {
      return -fidelity(state, squeezed_cat(params_of(u), g));
    } catch (const PreconditionError&) {
      return 1.0;
    }
  };
  const Eigen::Vector2d start(std::log(seed.alpha), std::log(seed.s_prime));
  const auto r = optimize::nelder_mead(objective, start, Eigen::Vector2d(0.1, 0.1), 1e-9, 1e-14, 2000);
  FidelityFit fit;
  fit.fidelity = std::clamp(-r.value, 0.0, 1.0);
  fit.cat = params_of(r.x);
  fit.converged = r.converged;
  return fit;
}

FidelityFit fit_nearest_comb(const Kernel& state, const CombParams& seed) {
  require(seed.a > 0 && seed.s > 0 && seed.s_prime > 0, "fit seed must be positive");
  const Grid& g = state.grid();
  auto params_of = [&](const Eigen::VectorXd& u) {
    CombParams c = seed;
    c.a = std::exp(u[0]);
    c.s = std::exp(u[1]);
    c.s_prime = std::exp(u[2]);
    return c;
  };
  auto objective = [&](const Eigen::VectorXd& u) {
    try {
      return -fidelity(state, comb(params_of(u), g));
    } catch (const PreconditionError&) {
      return 1.0;
    }
  };
  const Eigen::Vector3d start(std::log(seed.a), std::log(seed.s), std::log(seed.s_prime));
  const auto r = optimize::nelder_mead(objective, start, Eigen::Vector3d(0.02, 0.1, 0.1), 1e-9, 1e-14, 3000);
  FidelityFit fit;
  fit.fidelity = std::clamp(-r.value, 0.0, 1.0);
  fit.comb = params_of(r.x);
  fit.converged = r.converged;
  fit.condition_holds = fit.comb->condition_holds();
  return fit;
}

namespace {

struct Evaluation {
  double fidelity = 0.0;
  double p_succ = 0.0;
};

class ScheduleEvaluator {
 public:
  ScheduleEvaluator(PlanKind kind, int p, const Grid& grid, const ScheduleSearch& search,
                    const std::optional<CombSource>& source)
      : kind_(kind), p_(p), grid_(grid), search_(search), source_(source) {
    if (kind == PlanKind::comb) require(source.has_value(), "comb schedule search needs an input cat");
  }

  BreedingPlan plan(const std::vector<double>& widths) const {
    const Schedule s = Schedule::explicit_widths(widths, search_.nodes);
    if (kind_ == PlanKind::cat) return BreedingPlan::cat(p_, s, grid_.dx());
    return BreedingPlan::comb(p_, source_->a0, s, grid_.dx());
  }

  Evaluation operator()(const std::vector<double>& widths) const {
    const BreedingPlan pl = plan(widths);
    try {
      if (kind_ == PlanKind::cat) {
        const auto r = breed_cat(pl, grid_);
        return {fit_nearest_scs(r.state, static_cast<double>(1 << p_)).fidelity, r.ledger.p_succ()};
      }
      const auto r = breed_comb(pl, source_->cat, grid_);
      const CombParams seed{LogicalBit::zero, pl.final_spacing(), source_->a0 / std::numbers::pi, source_->s_prime};
      return {fit_nearest_comb(r.state, seed).fidelity, r.ledger.p_succ()};
    } catch (const PreconditionError&) {
      return {0.0, 0.0};
    }
  }

 private:
  PlanKind kind_;
  int p_;
  Grid grid_;
  ScheduleSearch search_;
  std::optional<CombSource> source_;
};

std::vector<double> geometric(double first, double ratio, int p) {
  std::vector<double> w;
  for (int l = 0; l < p; ++l) w.push_back(first * std::pow(ratio, l));
  return w;
}

// Largest common log-scale t with F(widths * e^t) >= target, searched in [lo, hi].
double feasible_scale(const ScheduleEvaluator& eval, const std::vector<double>& widths, double target,
                      std::vector<bool> frozen, double lo, double hi, double tol) {
  auto scaled = [&](double t) {
    std::vector<double> w = widths;
    for (std::size_t l = 0; l < w.size(); ++l)
      if (!frozen[l]) w[l] *= std::exp(t);
    return w;
  };
  auto ok = [&](double t) { return eval(scaled(t)).fidelity >= target; };
  if (!ok(lo)) return -std::numeric_limits<double>::infinity();
  if (ok(hi)) return hi;
  return optimize::bisect_boundary(ok, lo, hi, tol);
}

}  // namespace

double rule_first_width(int p, double target_fidelity, const Grid& grid, const ScheduleSearch& search) {
  const ScheduleEvaluator eval(PlanKind::cat, p, grid, search, std::nullopt);
  const double dx = grid.dx();
  const double best = eval(geometric(dx / 2, 1.0, p)).fidelity;
  if (best < target_fidelity)
    throw PreconditionError("target fidelity unreachable on this grid: max achievable " + std::to_string(best));
  auto ok = [&](double lw) { return eval(geometric(std::exp(lw), search.ratio, p)).fidelity >= target_fidelity; };
  double hi = std::log(0.05);
  for (int i = 0; i < search.max_first_width_steps && ok(hi); ++i) hi += std::log(2.0);
  return std::exp(optimize::bisect_boundary(ok, std::log(dx), hi, search.width_tolerance));
}

ScheduleOptimum optimize_schedule(PlanKind kind, int p, double target_fidelity, const Grid& grid,
                                  const ScheduleSearch& search, const std::optional<CombSource>& comb_source) {
  require(p >= 1 && p <= 6, "schedule search supports 1 to 6 stages");
  const ScheduleEvaluator eval(kind, p, grid, search, comb_source);
  const double dx = grid.dx();

  const double top = eval(std::vector<double>(static_cast<std::size_t>(p), dx / 2)).fidelity;
  if (top < target_fidelity)
    throw PreconditionError("target fidelity unreachable on this grid: max achievable " + std::to_string(top));

  const std::vector<double> base = geometric(1.0, search.ratio, p);
  const std::vector<bool> none(static_cast<std::size_t>(p), false);
  double hi = std::log(0.05);
  auto ok = [&](double t) {
    std::vector<double> w = base;
    for (auto& v : w) v *= std::exp(t);
    return eval(w).fidelity >= target_fidelity;
  };
  for (int i = 0; i < search.max_first_width_steps && ok(hi); ++i) hi += std::log(2.0);
  const double t_rule = feasible_scale(eval, base, target_fidelity, none, std::log(dx), hi, search.width_tolerance);

  std::vector<double> widths = base;
  for (auto& v : widths) v *= std::exp(t_rule);
  Evaluation best = eval(widths);

  ScheduleOptimum out;
  out.rule_first_width = widths.front();
  out.rule_p_succ = best.p_succ;

  if (p > 1) {
    for (int sweep = 0; sweep < search.sweeps; ++sweep) {
      bool improved = false;
      for (int l = 0; l < p; ++l) {
        std::vector<bool> frozen(static_cast<std::size_t>(p), false);
        frozen[static_cast<std::size_t>(l)] = true;
        auto candidate = [&](double t) {
          std::vector<double> w = widths;
          w[static_cast<std::size_t>(l)] *= std::exp(t);
          const double s = feasible_scale(eval, w, target_fidelity, frozen, -1.5, 1.5, 1e-3);
          if (!std::isfinite(s)) return std::make_pair(w, Evaluation{});
          for (int m = 0; m < p; ++m)
            if (m != l) w[static_cast<std::size_t>(m)] *= std::exp(s);
          return std::make_pair(w, eval(w));
        };
        const auto line = optimize::golden_maximize([&](double t) { return candidate(t).second.p_succ; }, -1.0, 1.0,
                                                    0.02);
        const auto [w, e] = candidate(line.x);
        if (e.fidelity >= target_fidelity && e.p_succ > best.p_succ * (1 + 1e-9)) {
          widths = w;
          best = e;
          improved = true;
        }
      }
      if (!improved) break;
    }
  }
  out.plan = ScheduleEvaluator(kind, p, grid, search, comb_source).plan(widths);
  out.fidelity = best.fidelity;
  out.p_succ = best.p_succ;
  return out;
}

}  // namespace cvbell
