#include "ccopf/opf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <sstream>

#include "ccopf/errors.hpp"

namespace ccopf {

TighteningSet TighteningSet::zeros(const FeederModel& feeder) {
  const auto nc = static_cast<Eigen::Index>(feeder.connections().size());
  const auto ni = static_cast<Eigen::Index>(feeder.inverters().size());
  return {Eigen::VectorXd::Zero(nc), Eigen::VectorXd::Zero(nc), Eigen::VectorXd::Zero(ni),
          Eigen::VectorXd::Zero(ni)};
}

void TighteningSet::clamp_nonnegative() {
  v_upper = v_upper.cwiseMax(0.0);
  v_lower = v_lower.cwiseMax(0.0);
  q_upper = q_upper.cwiseMax(0.0);
  q_lower = q_lower.cwiseMax(0.0);
}

const char* to_string(OpfStatus s) {
  switch (s) {
    case OpfStatus::Optimal: return "optimal";
    case OpfStatus::MaxIterations: return "max-iterations";
  }
  return "unknown";
}

ReactiveLimits nominal_q_limits(const FeederModel& feeder, const ScenarioSet& scenarios) {
  const auto& invs = feeder.inverters();
  const auto n = static_cast<Eigen::Index>(invs.size());
  ReactiveLimits lim{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n), {}};
  for (Eigen::Index k = 0; k < n; ++k) {
    const Inverter& inv = invs[static_cast<std::size_t>(k)];
    const double s = inv.rating_kva / feeder.s_base_kva();
    const double p = scenarios.mean_gen()(static_cast<Eigen::Index>(inv.house)) / feeder.s_base_kva();
    const double slack = s * s - p * p;
    if (slack < 0.0) lim.saturated.push_back(static_cast<std::size_t>(k));
    lim.upper(k) = std::sqrt(std::max(0.0, slack));
    lim.lower(k) = -lim.upper(k);
  }
  return lim;
}

namespace {

void check_sizes(const FeederModel& feeder, const TighteningSet& t) {
  const auto nc = static_cast<Eigen::Index>(feeder.connections().size());
  const auto ni = static_cast<Eigen::Index>(feeder.inverters().size());
  if (t.v_upper.size() != nc || t.v_lower.size() != nc || t.q_upper.size() != ni || t.q_lower.size() != ni)
    throw InputError("tightening vectors do not match the feeder");
}

}  // namespace

SetpointBox tightened_q_box(const FeederModel& feeder, const ScenarioSet& scenarios, const TighteningSet& t) {
  check_sizes(feeder, t);
  const ReactiveLimits lim = nominal_q_limits(feeder, scenarios);
  SetpointBox box{lim.lower + t.q_lower, lim.upper - t.q_upper};
  for (Eigen::Index k = 0; k < box.lower.size(); ++k)
    if (box.lower(k) > box.upper(k)) {
      const Inverter& inv = feeder.inverters()[static_cast<std::size_t>(k)];
      std::ostringstream msg;
      msg << "reactive interval of inverter at "
          << feeder.connection_label({inv.node, inv.phase}) << " is empty after tightening ["
          << box.lower(k) << ", " << box.upper(k) << "]";
      throw InfeasibleError(msg.str());
    }
  return box;
}

SetpointBox tightened_v_band(const FeederModel& feeder, const TighteningSet& t) {
  check_sizes(feeder, t);
  const auto nc = static_cast<Eigen::Index>(feeder.connections().size());
  SetpointBox band{Eigen::VectorXd::Constant(nc, feeder.v_min()) + t.v_lower,
                   Eigen::VectorXd::Constant(nc, feeder.v_max()) - t.v_upper};
  for (Eigen::Index j = 0; j < nc; ++j)
    if (band.lower(j) > band.upper(j)) {
      std::ostringstream msg;
      msg << "voltage interval at " << feeder.connection_label(feeder.connections()[static_cast<std::size_t>(j)])
          << " is empty after tightening [" << band.lower(j) << ", " << band.upper(j) << "]";
      throw InfeasibleError(msg.str());
    }
  return band;
}

Eigen::VectorXd OperatingPoint::connection_magnitudes(const Network& net) const {
  const auto nu = static_cast<Eigen::Index>(net.unknowns());
  return net.pack(voltages).tail(nu);
}

namespace {

Eigen::VectorXd project(const Eigen::VectorXd& x, const SetpointBox& box) {
  return x.cwiseMax(box.lower).cwiseMin(box.upper);
}

// Reduced problem: voltages follow from the set-points through the power flow
// at average injections.
class Reduced {
public:
  Reduced(const Network& net, const ScenarioSet& scenarios, const SetpointBox& band, const PowerFlowSettings& pf)
      : net_(net), band_(band), pf_(pf), warm_(flat_start(net.feeder())) {
    const FeederModel& feeder = net.feeder();
    base_ = injections_for(scenarios.mean_point(), Eigen::VectorXd::Zero(static_cast<Eigen::Index>(feeder.inverters().size())), feeder);
    for (const Inverter& inv : feeder.inverters())
      inverter_rows_.push_back(static_cast<Eigen::Index>(*feeder.connection_index(inv.node, inv.phase)));
  }

  struct Point {
    Eigen::VectorXd q;
    VoltageState state;
    Eigen::Vector3d p_slack, q_slack;
    double objective = 0.0;
    Eigen::VectorXd c_upper;  // |V| − upper
    Eigen::VectorXd c_lower;  // lower − |V|

    double violation() const {
      const double a = c_upper.size() ? c_upper.maxCoeff() : 0.0;
      const double b = c_lower.size() ? c_lower.maxCoeff() : 0.0;
      return std::max({0.0, a, b});
    }
  };

  std::optional<Point> evaluate(const Eigen::VectorXd& q) {
    Injections inj = base_;
    for (std::size_t k = 0; k < inverter_rows_.size(); ++k) inj.q(inverter_rows_[k]) += q(static_cast<Eigen::Index>(k));
    PowerFlowResult pf = solve_pf(net_, inj, &warm_, pf_);
    if (!pf.converged()) pf = solve_pf(net_, inj, nullptr, pf_);
    if (!pf.converged()) return std::nullopt;
    warm_ = pf.voltages;
    Point pt;
    pt.q = q;
    pt.state = std::move(pf.voltages);
    pt.p_slack = pf.p_slack;
    pt.q_slack = pf.q_slack;
    pt.objective = total_vuf_squared(net_.feeder(), pt.state);
    const auto nu = static_cast<Eigen::Index>(net_.unknowns());
    const Eigen::VectorXd v = net_.pack(pt.state).tail(nu);
    pt.c_upper = v - band_.upper;
    pt.c_lower = band_.lower - v;
    return pt;
  }

  // Gradient in q of w_f·F + Σ w_hi·c_upper + Σ w_lo·c_lower by the adjoint.
  Eigen::VectorXd gradient(const Point& pt, double w_f, const Eigen::VectorXd& w_hi, const Eigen::VectorXd& w_lo) const {
    const auto nu = static_cast<Eigen::Index>(net_.unknowns());
    Eigen::VectorXd gx = Eigen::VectorXd::Zero(2 * nu);
    if (w_f != 0.0) gx = w_f * total_vuf_squared_gradient(net_, pt.state);
    gx.tail(nu) += w_hi - w_lo;
    const Eigen::MatrixXd J = mismatch_jacobian(net_, pt.state);
    const Eigen::VectorXd lambda = J.transpose().partialPivLu().solve(gx);
    Eigen::VectorXd g(static_cast<Eigen::Index>(inverter_rows_.size()));
    for (std::size_t k = 0; k < inverter_rows_.size(); ++k)
      g(static_cast<Eigen::Index>(k)) = -lambda(nu + inverter_rows_[k]);
    return g;
  }

  const Network& network() const { return net_; }

private:
  const Network& net_;
  SetpointBox band_;
  PowerFlowSettings pf_;
  VoltageState warm_;
  Injections base_;
  std::vector<Eigen::Index> inverter_rows_;
};

using Point = Reduced::Point;

// Smooth merit of a point: value and gradient in q.
struct MeritEval {
  double value;
  Eigen::VectorXd grad;
};

double projected_gradient_norm(const Eigen::VectorXd& x, const Eigen::VectorXd& g, const SetpointBox& box) {
  if (x.size() == 0) return 0.0;
  return (project(x - g, box) - x).cwiseAbs().maxCoeff();
}

struct BoxResult {
  Point point;
  MeritEval merit;
  double proj_grad = 0.0;
};

// Projected quasi-Newton with a BFGS inverse Hessian restricted to the free
// variables and an Armijo search along the projection arc.
template <class Merit>
BoxResult minimize_box(Reduced& red, const Merit& merit, const Point& start, const SetpointBox& box, double tol,
                       int max_iter) {
  Point pt = start;
  MeritEval m = merit(pt);
  const auto n = pt.q.size();
  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(n, n);
  bool curvature = false;

  for (int it = 0; it < max_iter; ++it) {
    const double pg = projected_gradient_norm(pt.q, m.grad, box);
    if (pg <= tol) return {std::move(pt), std::move(m), pg};

    std::vector<bool> free(static_cast<std::size_t>(n), true);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double eps = 1e-12 * (1.0 + std::abs(pt.q(i)));
      if ((pt.q(i) <= box.lower(i) + eps && m.grad(i) > 0.0) || (pt.q(i) >= box.upper(i) - eps && m.grad(i) < 0.0))
        free[static_cast<std::size_t>(i)] = false;
    }
    Eigen::VectorXd gf = m.grad;
    for (Eigen::Index i = 0; i < n; ++i)
      if (!free[static_cast<std::size_t>(i)]) gf(i) = 0.0;

    Eigen::VectorXd d;
    if (curvature) {
      d = -(H * gf);
      for (Eigen::Index i = 0; i < n; ++i)
        if (!free[static_cast<std::size_t>(i)]) d(i) = 0.0;
      if (gf.dot(d) >= 0.0) {
        curvature = false;
        H.setIdentity();
      }
    }
    if (!curvature) {
      const double gmax = m.grad.cwiseAbs().maxCoeff();
      d = -m.grad * std::min(1.0, 0.02 / gmax);
    }

    std::optional<Point> trial;
    MeritEval tm{};
    bool accepted = false;
    double t = 1.0;
    for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
      const Eigen::VectorXd q = project(pt.q + t * d, box);
      const Eigen::VectorXd s = q - pt.q;
      if (s.cwiseAbs().maxCoeff() <= 1e-15 * (1.0 + pt.q.cwiseAbs().maxCoeff())) break;
      trial = red.evaluate(q);
      if (!trial) continue;
      tm = merit(*trial);
      if (tm.value <= m.value + 1e-4 * m.grad.dot(s)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      if (curvature) {
        curvature = false;
        H.setIdentity();
        continue;
      }
      return {std::move(pt), std::move(m), pg};
    }

    const Eigen::VectorXd s = trial->q - pt.q;
    const Eigen::VectorXd y = tm.grad - m.grad;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (!curvature) {
        H = Eigen::MatrixXd::Identity(n, n) * (sy / y.squaredNorm());
        curvature = true;
      }
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd V = Eigen::MatrixXd::Identity(n, n) - rho * y * s.transpose();
      H = V.transpose() * H * V + rho * s * s.transpose();
    }
    pt = std::move(*trial);
    m = std::move(tm);
  }
  const double pg = projected_gradient_norm(pt.q, m.grad, box);
  return {std::move(pt), std::move(m), pg};
}

struct AlOutcome {
  Point best;             // lowest objective among feasible iterates
  bool have_feasible = false;
  Point last;
  double stationarity = 0.0;
  int outer = 0;
  bool converged = false;
};

AlOutcome augmented_lagrangian(Reduced& red, const Point& start, const SetpointBox& box, const OpfSettings& st) {
  const auto nc = start.c_upper.size();
  Eigen::VectorXd mu_hi = Eigen::VectorXd::Zero(nc), mu_lo = Eigen::VectorXd::Zero(nc);
  double rho = st.penalty_init;
  double prev_violation = std::numeric_limits<double>::infinity();

  AlOutcome out{start, false, start, 0.0, 0, false};
  auto consider = [&](const Point& p) {
    if (p.violation() <= st.feasibility_tol && (!out.have_feasible || p.objective < out.best.objective)) {
      out.best = p;
      out.have_feasible = true;
    }
  };
  consider(start);

  Point pt = start;
  for (int k = 0; k < st.max_outer_iter; ++k) {
    auto merit = [&](const Point& p) {
      const Eigen::VectorXd w_hi = (mu_hi + rho * p.c_upper).cwiseMax(0.0);
      const Eigen::VectorXd w_lo = (mu_lo + rho * p.c_lower).cwiseMax(0.0);
      const double pen = (w_hi.squaredNorm() - mu_hi.squaredNorm() + w_lo.squaredNorm() - mu_lo.squaredNorm()) /
                         (2.0 * rho);
      return MeritEval{p.objective + pen, red.gradient(p, 1.0, w_hi, w_lo)};
    };
    BoxResult r = minimize_box(red, merit, pt, box, st.stationarity_tol, st.max_inner_iter);
    pt = std::move(r.point);
    out.outer = k + 1;
    out.stationarity = r.proj_grad;
    consider(pt);

    mu_hi = (mu_hi + rho * pt.c_upper).cwiseMax(0.0);
    mu_lo = (mu_lo + rho * pt.c_lower).cwiseMax(0.0);
    const double viol = pt.violation();

    // Complementarity on the updated multipliers: inactive bands must carry
    // no multiplier weight for the point to count as a KKT point.
    double comp = 0.0;
    for (Eigen::Index j = 0; j < nc; ++j) {
      comp = std::max(comp, std::min(mu_hi(j), std::abs(pt.c_upper(j))));
      comp = std::max(comp, std::min(mu_lo(j), std::abs(pt.c_lower(j))));
    }
    if (viol <= st.feasibility_tol && r.proj_grad <= st.stationarity_tol && comp <= st.feasibility_tol) {
      out.converged = true;
      break;
    }
    if (viol > 0.25 * prev_violation) rho *= st.penalty_growth;
    prev_violation = viol;
  }
  out.last = std::move(pt);
  return out;
}

// Minimizes the squared band violation alone.
std::optional<Point> restore(Reduced& red, const Point& start, const SetpointBox& box, const OpfSettings& st) {
  auto merit = [&](const Point& p) {
    const Eigen::VectorXd w_hi = p.c_upper.cwiseMax(0.0);
    const Eigen::VectorXd w_lo = p.c_lower.cwiseMax(0.0);
    return MeritEval{0.5 * (w_hi.squaredNorm() + w_lo.squaredNorm()), red.gradient(p, 0.0, w_hi, w_lo)};
  };
  BoxResult r = minimize_box(red, merit, start, box, 1e-14, 4 * st.max_inner_iter);
  if (r.point.violation() <= st.feasibility_tol) return std::move(r.point);
  return std::nullopt;
}

std::string most_violated(const FeederModel& feeder, const Point& p) {
  Eigen::Index ju = 0, jl = 0;
  const double vu = p.c_upper.size() ? p.c_upper.maxCoeff(&ju) : 0.0;
  const double vl = p.c_lower.size() ? p.c_lower.maxCoeff(&jl) : 0.0;
  std::ostringstream msg;
  if (vu >= vl)
    msg << "upper voltage limit at " << feeder.connection_label(feeder.connections()[static_cast<std::size_t>(ju)])
        << " violated by " << vu;
  else
    msg << "lower voltage limit at " << feeder.connection_label(feeder.connections()[static_cast<std::size_t>(jl)])
        << " violated by " << vl;
  return msg.str();
}

OperatingPoint to_operating_point(const Point& p) {
  OperatingPoint op;
  op.q_setpoints = p.q;
  op.voltages = p.state;
  op.p_slack = p.p_slack;
  op.q_slack = p.q_slack;
  op.objective = p.objective;
  op.feasibility = p.violation();
  return op;
}

}  // namespace

OperatingPoint operating_point_at(const Network& net, const ScenarioSet& scenarios, const Eigen::VectorXd& q,
                                  const PowerFlowSettings& settings) {
  const FeederModel& feeder = net.feeder();
  if (q.size() != static_cast<Eigen::Index>(feeder.inverters().size()))
    throw InputError("set-point vector does not match the feeder inverters");
  const PowerFlowResult pf = solve_pf(net, injections_for(scenarios.mean_point(), q, feeder), nullptr, settings);
  if (!pf.converged())
    throw SolverError(std::string("power flow at the operating point failed: ") + to_string(pf.status));
  OperatingPoint op;
  op.q_setpoints = q;
  op.voltages = pf.voltages;
  op.p_slack = pf.p_slack;
  op.q_slack = pf.q_slack;
  op.objective = total_vuf_squared(feeder, op.voltages);
  return op;
}

OperatingPoint solve_ccr_opf(const Network& net, const ScenarioSet& scenarios, const TighteningSet& tightenings,
                             const OperatingPoint* warm_start, const OpfSettings& settings) {
  const FeederModel& feeder = net.feeder();
  if (scenarios.house_count() != feeder.house_ids().size())
    throw InputError("scenario houses do not match the feeder");
  const SetpointBox box = tightened_q_box(feeder, scenarios, tightenings);
  const SetpointBox band = tightened_v_band(feeder, tightenings);
  Reduced red(net, scenarios, band, settings.powerflow);

  const auto n = static_cast<Eigen::Index>(feeder.inverters().size());
  std::vector<Eigen::VectorXd> starts;
  if (warm_start && warm_start->q_setpoints.size() == n)
    starts.push_back(project(warm_start->q_setpoints, box));
  else
    starts.push_back(project(Eigen::VectorXd::Zero(n), box));
  std::mt19937_64 rng(settings.multistart_seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int s = 1; s < settings.multistart; ++s) {
    Eigen::VectorXd q(n);
    for (Eigen::Index k = 0; k < n; ++k) q(k) = box.lower(k) + u(rng) * (box.upper(k) - box.lower(k));
    starts.push_back(std::move(q));
  }

  std::optional<AlOutcome> chosen;
  std::optional<Point> fallback;
  for (const Eigen::VectorXd& q0 : starts) {
    std::optional<Point> p0 = red.evaluate(q0);
    if (!p0) continue;
    AlOutcome out = augmented_lagrangian(red, *p0, box, settings);
    if (!fallback || out.last.violation() < fallback->violation()) fallback = out.last;
    const bool better = !chosen || (out.have_feasible && !chosen->have_feasible) ||
                        (out.have_feasible == chosen->have_feasible && out.converged && !chosen->converged) ||
                        (out.have_feasible == chosen->have_feasible && out.converged == chosen->converged &&
                         out.best.objective < chosen->best.objective);
    if (better) chosen = std::move(out);
  }
  if (!fallback) throw SolverError("power flow failed at every starting point");

  if (chosen && chosen->converged) {
    OperatingPoint op = to_operating_point(chosen->last);
    op.status = OpfStatus::Optimal;
    op.outer_iterations = chosen->outer;
    op.stationarity = chosen->stationarity;
    return op;
  }
  if (chosen && chosen->have_feasible) {
    OperatingPoint op = to_operating_point(chosen->best);
    op.status = OpfStatus::MaxIterations;
    op.outer_iterations = chosen->outer;
    op.stationarity = chosen->stationarity;
    return op;
  }
  std::optional<Point> restored = restore(red, *fallback, box, settings);
  if (!restored) throw InfeasibleError(most_violated(feeder, *fallback));
  OperatingPoint op = to_operating_point(*restored);
  op.status = OpfStatus::MaxIterations;
  op.outer_iterations = chosen ? chosen->outer : 0;
  return op;
}

}  // namespace ccopf
