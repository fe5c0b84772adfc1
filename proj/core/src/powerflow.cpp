#include "ccopf/powerflow.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "ccopf/errors.hpp"

namespace ccopf {

namespace {

constexpr double kDeg120 = 2.0 * std::numbers::pi / 3.0;

// Rotations applied to phases (a, b, c) when forming the sequence sums.
const std::array<Complex, 3> kNegRot{Complex(1.0, 0.0), std::polar(1.0, -kDeg120), std::polar(1.0, kDeg120)};
const std::array<Complex, 3> kPosRot{Complex(1.0, 0.0), std::polar(1.0, kDeg120), std::polar(1.0, -kDeg120)};

}  // namespace

double slack_angle(Phase p) {
  switch (p) {
    case Phase::A: return 0.0;
    case Phase::B: return -kDeg120;
    case Phase::C: return kDeg120;
  }
  return 0.0;
}

VoltageState flat_start(const FeederModel& feeder) {
  const auto n = static_cast<Eigen::Index>(feeder.slot_count());
  VoltageState s{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)};
  for (std::size_t i = 0; i < feeder.node_count(); ++i)
    for (Phase p : kPhases) {
      if (!feeder.nodes()[i].phases.has(p)) continue;
      const auto k = static_cast<Eigen::Index>(feeder.slot(i, p));
      s.magnitude(k) = 1.0;
      s.angle(k) = slack_angle(p);
    }
  return s;
}

Network::Network(const FeederModel& feeder) : feeder_(&feeder), y_(assemble_admittance(feeder)) {
  for (std::size_t i = 0; i < feeder.node_count(); ++i)
    for (Phase p : kPhases) {
      if (!feeder.nodes()[i].phases.has(p)) continue;
      const std::size_t k = feeder.slot(i, p);
      present_slots_.push_back(k);
      if (i == feeder.slack())
        slack_slots_.push_back(k);
      else
        unknown_slots_.push_back(k);
    }
}

Eigen::VectorXd Network::pack(const VoltageState& s) const {
  const auto nu = static_cast<Eigen::Index>(unknown_slots_.size());
  Eigen::VectorXd x(2 * nu);
  for (Eigen::Index i = 0; i < nu; ++i) {
    const auto k = static_cast<Eigen::Index>(unknown_slots_[static_cast<std::size_t>(i)]);
    x(i) = s.angle(k);
    x(nu + i) = s.magnitude(k);
  }
  return x;
}

void Network::unpack(const Eigen::VectorXd& x, VoltageState& s) const {
  const auto nu = static_cast<Eigen::Index>(unknown_slots_.size());
  for (Eigen::Index i = 0; i < nu; ++i) {
    const auto k = static_cast<Eigen::Index>(unknown_slots_[static_cast<std::size_t>(i)]);
    s.angle(k) = x(i);
    s.magnitude(k) = x(nu + i);
  }
}

SlotPowers injected_power(const Network& net, const VoltageState& state) {
  const auto& G = net.admittance().G;
  const auto& B = net.admittance().B;
  const auto n = static_cast<Eigen::Index>(net.feeder().slot_count());
  SlotPowers out{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)};
  for (std::size_t si : net.present_slots()) {
    const auto i = static_cast<Eigen::Index>(si);
    double p = 0.0, q = 0.0;
    for (std::size_t sk : net.present_slots()) {
      const auto k = static_cast<Eigen::Index>(sk);
      const double g = G(i, k), b = B(i, k);
      if (g == 0.0 && b == 0.0) continue;
      const double th = state.angle(i) - state.angle(k);
      const double c = std::cos(th), s = std::sin(th);
      p += state.magnitude(k) * (g * c + b * s);
      q += state.magnitude(k) * (g * s - b * c);
    }
    out.p(i) = state.magnitude(i) * p;
    out.q(i) = state.magnitude(i) * q;
  }
  return out;
}

Eigen::VectorXd mismatch(const Network& net, const VoltageState& state, const Injections& injections) {
  const auto nu = static_cast<Eigen::Index>(net.unknowns());
  if (injections.p.size() != nu || injections.q.size() != nu)
    throw InputError("injection vector does not match the feeder connections");
  const SlotPowers calc = injected_power(net, state);
  Eigen::VectorXd r(2 * nu);
  for (Eigen::Index i = 0; i < nu; ++i) {
    const auto k = static_cast<Eigen::Index>(net.unknown_slots()[static_cast<std::size_t>(i)]);
    r(i) = injections.p(i) - calc.p(k);
    r(nu + i) = injections.q(i) - calc.q(k);
  }
  return r;
}

Eigen::MatrixXd mismatch_jacobian(const Network& net, const VoltageState& state) {
  const auto& G = net.admittance().G;
  const auto& B = net.admittance().B;
  const auto nu = static_cast<Eigen::Index>(net.unknowns());
  const SlotPowers calc = injected_power(net, state);

  // Jacobian of the computed powers; the mismatch Jacobian is its negative.
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(2 * nu, 2 * nu);
  const auto& slots = net.unknown_slots();
  for (Eigen::Index a = 0; a < nu; ++a) {
    const auto i = static_cast<Eigen::Index>(slots[static_cast<std::size_t>(a)]);
    const double vi = state.magnitude(i);
    for (Eigen::Index b = 0; b < nu; ++b) {
      const auto k = static_cast<Eigen::Index>(slots[static_cast<std::size_t>(b)]);
      if (a == b) continue;
      const double g = G(i, k), bb = B(i, k);
      if (g == 0.0 && bb == 0.0) continue;
      const double th = state.angle(i) - state.angle(k);
      const double c = std::cos(th), s = std::sin(th);
      const double vk = state.magnitude(k);
      J(a, b) = vi * vk * (g * s - bb * c);          // dP/dθ
      J(a, nu + b) = vi * (g * c + bb * s);          // dP/d|V|
      J(nu + a, b) = -vi * vk * (g * c + bb * s);    // dQ/dθ
      J(nu + a, nu + b) = vi * (g * s - bb * c);     // dQ/d|V|
    }
    const double gii = G(i, i), bii = B(i, i);
    const double pi = calc.p(i), qi = calc.q(i);
    J(a, a) = -qi - bii * vi * vi;
    J(a, nu + a) = pi / vi + gii * vi;
    J(nu + a, a) = pi - gii * vi * vi;
    J(nu + a, nu + a) = qi / vi - bii * vi;
  }
  return -J;
}

const char* to_string(PowerFlowStatus s) {
  switch (s) {
    case PowerFlowStatus::Converged: return "converged";
    case PowerFlowStatus::NonConvergence: return "non-convergence";
    case PowerFlowStatus::SingularJacobian: return "singular-jacobian";
  }
  return "unknown";
}

namespace {

void fill_slack(const Network& net, PowerFlowResult& r) {
  const SlotPowers calc = injected_power(net, r.voltages);
  for (std::size_t j = 0; j < net.slack_slots().size(); ++j) {
    const auto k = static_cast<Eigen::Index>(net.slack_slots()[j]);
    r.p_slack(static_cast<Eigen::Index>(j)) = calc.p(k);
    r.q_slack(static_cast<Eigen::Index>(j)) = calc.q(k);
  }
}

bool state_ok(const Eigen::VectorXd& x, Eigen::Index nu) {
  return x.allFinite() && (x.tail(nu).array() > 0.0).all();
}

}  // namespace

PowerFlowResult solve_pf(const Network& net, const Injections& injections, const VoltageState* warm_start,
                         const PowerFlowSettings& settings) {
  const FeederModel& feeder = net.feeder();
  PowerFlowResult result;
  result.voltages = flat_start(feeder);
  if (warm_start) {
    if (warm_start->magnitude.size() != result.voltages.magnitude.size())
      throw InputError("warm start does not match the feeder");
    net.unpack(net.pack(*warm_start), result.voltages);
  }
  const auto nu = static_cast<Eigen::Index>(net.unknowns());

  Eigen::VectorXd x = net.pack(result.voltages);
  if (!state_ok(x, nu)) x = net.pack(flat_start(feeder));
  net.unpack(x, result.voltages);
  Eigen::VectorXd r = mismatch(net, result.voltages, injections);
  double norm = r.size() ? r.cwiseAbs().maxCoeff() : 0.0;

  for (int it = 0;; ++it) {
    result.iterations = it + 1;
    result.residual_trace.push_back(norm);
    result.max_residual = norm;
    if (norm <= settings.tolerance) {
      result.status = PowerFlowStatus::Converged;
      break;
    }
    if (it >= settings.max_iter) {
      result.status = PowerFlowStatus::NonConvergence;
      break;
    }
    const Eigen::MatrixXd J = mismatch_jacobian(net, result.voltages);
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(J);
    const double rcond = lu.rcond();
    if (!(rcond > 1e-14)) {
      result.status = PowerFlowStatus::SingularJacobian;
      break;
    }
    const Eigen::VectorXd dx = lu.solve(-r);

    double step = 1.0;
    Eigen::VectorXd x_new;
    Eigen::VectorXd r_new;
    double norm_new = 0.0;
    for (int h = 0;; ++h) {
      x_new = x + step * dx;
      if (state_ok(x_new, nu)) {
        net.unpack(x_new, result.voltages);
        r_new = mismatch(net, result.voltages, injections);
        norm_new = r_new.cwiseAbs().maxCoeff();
        if (std::isfinite(norm_new) && (norm_new <= norm || h >= settings.max_halvings)) break;
      } else if (h >= settings.max_halvings) {
        norm_new = std::numeric_limits<double>::infinity();
        break;
      }
      step *= 0.5;
    }
    if (!std::isfinite(norm_new)) {
      net.unpack(x, result.voltages);
      result.status = PowerFlowStatus::NonConvergence;
      break;
    }
    x = std::move(x_new);
    r = std::move(r_new);
    norm = norm_new;
  }
  fill_slack(net, result);
  return result;
}

SequenceVoltages sequence_voltages(const Complex& va, const Complex& vb, const Complex& vc) {
  SequenceVoltages s;
  s.negative = va * kNegRot[0] + vb * kNegRot[1] + vc * kNegRot[2];
  s.positive = va * kPosRot[0] + vb * kPosRot[1] + vc * kPosRot[2];
  return s;
}

SequenceVoltages sequence_voltages(const FeederModel& feeder, const VoltageState& state, std::size_t node) {
  if (!feeder.nodes().at(node).phases.three_phase())
    throw NotThreePhaseError("node \"" + feeder.nodes()[node].id + "\" does not carry all three phases");
  SequenceVoltages s = sequence_voltages(state.phasor(feeder.slot(node, Phase::A)),
                                         state.phasor(feeder.slot(node, Phase::B)),
                                         state.phasor(feeder.slot(node, Phase::C)));
  s.node = node;
  return s;
}

double vuf_squared(const SequenceVoltages& seq) {
  // Rotating a balanced triple leaves a few ulps in the other sequence; treat
  // that as zero on both sides.
  constexpr double floor = 4.0 * std::numeric_limits<double>::epsilon();
  const double den = std::norm(seq.positive);
  const double num = std::norm(seq.negative);
  if (!(den > 0.0) || den <= floor * floor * num)
    throw DegenerateSequenceError("positive-sequence voltage is zero");
  if (num <= floor * floor * den) return 0.0;
  return num / den;
}

double total_vuf_squared(const FeederModel& feeder, const VoltageState& state) {
  double total = 0.0;
  for (std::size_t node : feeder.three_phase_nodes()) total += vuf_squared(sequence_voltages(feeder, state, node));
  return total;
}

Eigen::VectorXd total_vuf_squared_gradient(const Network& net, const VoltageState& state) {
  const FeederModel& feeder = net.feeder();
  const auto nu = static_cast<Eigen::Index>(net.unknowns());
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(2 * nu);
  for (std::size_t node : feeder.three_phase_nodes()) {
    const SequenceVoltages seq = sequence_voltages(feeder, state, node);
    const double num = std::norm(seq.negative);
    const double den = std::norm(seq.positive);
    const double h = num / den;
    for (Phase p : kPhases) {
      const int ph = static_cast<int>(p);
      const std::size_t slot = feeder.slot(node, p);
      const auto c = static_cast<Eigen::Index>(*feeder.connection_index(node, p));
      const Complex unit = std::polar(1.0, state.angle(static_cast<Eigen::Index>(slot)));
      const Complex u = state.phasor(slot);
      // d|z|²/dx = 2 Re(conj(z) dz/dx)
      const double dn_dv = 2.0 * std::real(std::conj(seq.negative) * kNegRot[ph] * unit);
      const double dd_dv = 2.0 * std::real(std::conj(seq.positive) * kPosRot[ph] * unit);
      const Complex ju = Complex(0.0, 1.0) * u;
      const double dn_dt = 2.0 * std::real(std::conj(seq.negative) * kNegRot[ph] * ju);
      const double dd_dt = 2.0 * std::real(std::conj(seq.positive) * kPosRot[ph] * ju);
      grad(c) += (dn_dt - h * dd_dt) / den;
      grad(nu + c) += (dn_dv - h * dd_dv) / den;
    }
  }
  return grad;
}

}  // namespace ccopf
