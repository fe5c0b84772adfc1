#pragma once

#include <array>
#include <complex>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ccopf {

using Complex = std::complex<double>;
using Matrix3c = Eigen::Matrix<Complex, 3, 3>;

enum class Phase : int { A = 0, B = 1, C = 2 };

inline constexpr std::array<Phase, 3> kPhases{Phase::A, Phase::B, Phase::C};

char phase_letter(Phase p);
Phase parse_phase(char c);

/// Which of the phases a, b, c are physically present at a node.
class PhaseMask {
public:
  PhaseMask() = default;
  PhaseMask(bool a, bool b, bool c);

  /// Parses strings like "abc", "ac", "b". Throws InputError on anything else.
  static PhaseMask parse(const std::string& s);

  bool has(Phase p) const { return present_[static_cast<int>(p)]; }
  int count() const;
  bool three_phase() const { return count() == 3; }
  bool contains(const PhaseMask& other) const;
  std::string str() const;

  bool operator==(const PhaseMask&) const = default;

private:
  std::array<bool, 3> present_{false, false, false};
};

struct Node {
  std::string id;
  PhaseMask phases;
  double base_kv = 0.0;  // line-to-line
};

/// Three-phase series element in per-unit admittance form.
struct Branch {
  std::size_t from = 0;
  std::size_t to = 0;
  PhaseMask phases;
  Matrix3c series_admittance = Matrix3c::Zero();
  Matrix3c shunt_admittance = Matrix3c::Zero();  // total, split half per end
  bool transformer = false;
};

struct Load {
  std::size_t node = 0;
  Phase phase = Phase::A;
  double pf = 0.9;
  std::size_t house = 0;
};

struct Inverter {
  std::size_t node = 0;
  Phase phase = Phase::A;
  double rating_kva = 0.0;
  std::size_t house = 0;
};

/// Constant-power demand that does not vary across samples (spot loads,
/// capacitor banks as negative kvar).
struct FixedLoad {
  std::size_t node = 0;
  Phase phase = Phase::A;
  double p_kw = 0.0;
  double q_kvar = 0.0;
};

/// A (node, phase) pair; the unit at which loads, inverters and voltages live.
struct Connection {
  std::size_t node = 0;
  Phase phase = Phase::A;

  bool operator==(const Connection&) const = default;
};

/// Validated three-phase feeder. Immutable once built by load_feeder or
/// FeederModel::build.
class FeederModel {
public:
  struct Spec {
    double s_base_kva = 1000.0;
    double v_min = 0.95;
    double v_max = 1.05;
    std::vector<Node> nodes;
    std::string slack_id;
    std::vector<Branch> branches;
    std::vector<Load> loads;
    std::vector<FixedLoad> fixed_loads;
    std::vector<Inverter> inverters;
    std::vector<std::string> house_ids;
  };

  /// Validates a spec and builds the model. Throws InputError naming the
  /// offending element.
  static FeederModel build(Spec spec);

  double s_base_kva() const { return spec_.s_base_kva; }
  double v_min() const { return spec_.v_min; }
  double v_max() const { return spec_.v_max; }
  const std::vector<Node>& nodes() const { return spec_.nodes; }
  const std::vector<Branch>& branches() const { return spec_.branches; }
  const std::vector<Load>& loads() const { return spec_.loads; }
  const std::vector<FixedLoad>& fixed_loads() const { return spec_.fixed_loads; }
  const std::vector<Inverter>& inverters() const { return spec_.inverters; }
  const std::vector<std::string>& house_ids() const { return spec_.house_ids; }
  std::size_t slack() const { return slack_; }
  std::size_t node_count() const { return spec_.nodes.size(); }

  std::optional<std::size_t> find_node(const std::string& id) const;
  std::optional<std::size_t> find_house(const std::string& id) const;

  /// Row of (node, phase) in the 3(n+1) nodal ordering.
  std::size_t slot(std::size_t node, Phase p) const { return 3 * node + static_cast<std::size_t>(p); }
  std::size_t slot(const Connection& c) const { return slot(c.node, c.phase); }
  std::size_t slot_count() const { return 3 * spec_.nodes.size(); }

  /// Present connections excluding the slack node, in slot order.
  const std::vector<Connection>& connections() const { return connections_; }
  /// Index of a connection in connections(), if present and non-slack.
  std::optional<std::size_t> connection_index(std::size_t node, Phase p) const;
  /// Nodes (excluding the slack) that carry all three phases.
  const std::vector<std::size_t>& three_phase_nodes() const { return three_phase_nodes_; }

  std::string connection_label(const Connection& c) const;

private:
  explicit FeederModel(Spec spec) : spec_(std::move(spec)) {}

  Spec spec_;
  std::size_t slack_ = 0;
  std::vector<Connection> connections_;
  std::vector<long> connection_of_slot_;
  std::vector<std::size_t> three_phase_nodes_;
};

/// Nodal admittance matrix Y = G + jB over all 3(n+1) slots.
struct AdmittanceMatrix {
  Eigen::MatrixXd G;
  Eigen::MatrixXd B;

  Eigen::MatrixXcd complex() const;
};

/// Reads and validates a feeder JSON file; impedances are converted to
/// per-unit on the file's s_base and the node voltage bases.
FeederModel load_feeder(const std::filesystem::path& path);
FeederModel parse_feeder(const std::string& json_text);

AdmittanceMatrix assemble_admittance(const FeederModel& model);

}  // namespace ccopf
