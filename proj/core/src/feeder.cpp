#include "ccopf/feeder.hpp"

#include <cmath>
#include <fstream>
#include <queue>
#include <sstream>

#include <json.hpp>

#include "ccopf/errors.hpp"

namespace ccopf {

using nlohmann::json;

char phase_letter(Phase p) {
  return "abc"[static_cast<int>(p)];
}

Phase parse_phase(char c) {
  switch (c) {
    case 'a': case 'A': return Phase::A;
    case 'b': case 'B': return Phase::B;
    case 'c': case 'C': return Phase::C;
    default: break;
  }
  throw InputError(std::string("invalid phase '") + c + "'");
}

PhaseMask::PhaseMask(bool a, bool b, bool c) : present_{a, b, c} {}

PhaseMask PhaseMask::parse(const std::string& s) {
  if (s.empty() || s.size() > 3)
    throw InputError("invalid phase string \"" + s + "\"");
  PhaseMask m;
  for (char ch : s) {
    const int p = static_cast<int>(parse_phase(ch));
    if (m.present_[p])
      throw InputError("duplicate phase in \"" + s + "\"");
    m.present_[p] = true;
  }
  return m;
}

int PhaseMask::count() const {
  return int(present_[0]) + int(present_[1]) + int(present_[2]);
}

bool PhaseMask::contains(const PhaseMask& other) const {
  for (int i = 0; i < 3; ++i)
    if (other.present_[i] && !present_[i]) return false;
  return true;
}

std::string PhaseMask::str() const {
  std::string out;
  for (Phase p : kPhases)
    if (has(p)) out += phase_letter(p);
  return out;
}

Eigen::MatrixXcd AdmittanceMatrix::complex() const {
  Eigen::MatrixXcd y(G.rows(), G.cols());
  y.real() = G;
  y.imag() = B;
  return y;
}

std::optional<std::size_t> FeederModel::find_node(const std::string& id) const {
  for (std::size_t i = 0; i < spec_.nodes.size(); ++i)
    if (spec_.nodes[i].id == id) return i;
  return std::nullopt;
}

std::optional<std::size_t> FeederModel::find_house(const std::string& id) const {
  for (std::size_t i = 0; i < spec_.house_ids.size(); ++i)
    if (spec_.house_ids[i] == id) return i;
  return std::nullopt;
}

std::optional<std::size_t> FeederModel::connection_index(std::size_t node, Phase p) const {
  const long idx = connection_of_slot_.at(slot(node, p));
  if (idx < 0) return std::nullopt;
  return static_cast<std::size_t>(idx);
}

std::string FeederModel::connection_label(const Connection& c) const {
  return spec_.nodes.at(c.node).id + "." + phase_letter(c.phase);
}

FeederModel FeederModel::build(Spec spec) {
  if (!(spec.s_base_kva > 0.0))
    throw InputError("s_base_kva must be positive");
  if (!(spec.v_min > 0.0) || !(spec.v_max > spec.v_min))
    throw InputError("voltage limits must satisfy 0 < v_min < v_max");
  if (spec.nodes.empty())
    throw InputError("feeder has no nodes");

  const std::size_t n = spec.nodes.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Node& nd = spec.nodes[i];
    if (nd.phases.count() == 0)
      throw InputError("node \"" + nd.id + "\" has no phases");
    if (!(nd.base_kv > 0.0))
      throw InputError("node \"" + nd.id + "\" has nonpositive base_kv");
    for (std::size_t j = 0; j < i; ++j)
      if (spec.nodes[j].id == nd.id)
        throw InputError("duplicate node id \"" + nd.id + "\"");
  }

  FeederModel model(std::move(spec));
  Spec& s = model.spec_;

  auto slack = model.find_node(s.slack_id);
  if (!slack) throw InputError("unknown node reference \"" + s.slack_id + "\" (slack)");
  model.slack_ = *slack;
  if (!s.nodes[model.slack_].phases.three_phase())
    throw InputError("slack node \"" + s.slack_id + "\" must carry all three phases");

  for (std::size_t k = 0; k < s.branches.size(); ++k) {
    const Branch& br = s.branches[k];
    const std::string label = "branch " + std::to_string(k) + " (" + s.nodes.at(br.from).id +
                              " -> " + s.nodes.at(br.to).id + ")";
    if (br.from == br.to) throw InputError(label + " connects a node to itself");
    if (br.phases.count() == 0) throw InputError(label + " has no phases");
    if (!s.nodes[br.from].phases.contains(br.phases) || !s.nodes[br.to].phases.contains(br.phases))
      throw InputError(label + " uses a phase missing at one of its end nodes");
    for (Phase p : kPhases) {
      if (br.phases.has(p)) continue;
      const int i = static_cast<int>(p);
      if (br.series_admittance.row(i).cwiseAbs().maxCoeff() != 0.0 ||
          br.series_admittance.col(i).cwiseAbs().maxCoeff() != 0.0 ||
          br.shunt_admittance.row(i).cwiseAbs().maxCoeff() != 0.0 ||
          br.shunt_admittance.col(i).cwiseAbs().maxCoeff() != 0.0)
        throw InputError(label + " has nonzero entries in absent phase " +
                         std::string(1, phase_letter(p)));
    }
    if (!br.transformer && (br.series_admittance - br.series_admittance.transpose()).cwiseAbs().maxCoeff() >
                               1e-9 * (1.0 + br.series_admittance.cwiseAbs().maxCoeff()))
      throw InputError(label + " is not symmetric; mark it as a transformer");
  }

  // Every present phase must reach the slack through branches carrying it.
  for (Phase p : kPhases) {
    std::vector<bool> seen(n, false);
    std::queue<std::size_t> frontier;
    seen[model.slack_] = true;
    frontier.push(model.slack_);
    while (!frontier.empty()) {
      const std::size_t u = frontier.front();
      frontier.pop();
      for (const Branch& br : s.branches) {
        if (!br.phases.has(p)) continue;
        std::size_t v = n;
        if (br.from == u) v = br.to;
        else if (br.to == u) v = br.from;
        if (v < n && !seen[v]) {
          seen[v] = true;
          frontier.push(v);
        }
      }
    }
    for (std::size_t i = 0; i < n; ++i)
      if (s.nodes[i].phases.has(p) && !seen[i])
        throw InputError("disconnected graph: node \"" + s.nodes[i].id + "\" phase " +
                         std::string(1, phase_letter(p)) + " is not connected to the slack");
  }

  const std::size_t houses = s.house_ids.size();
  for (const Load& ld : s.loads) {
    if (ld.node >= n || ld.house >= houses) throw InputError("load references an unknown node or house");
    if (ld.node == model.slack_)
      throw InputError("load \"" + s.house_ids[ld.house] + "\" is attached to the slack node");
    if (!s.nodes[ld.node].phases.has(ld.phase))
      throw InputError("load \"" + s.house_ids[ld.house] + "\" uses absent phase " +
                       std::string(1, phase_letter(ld.phase)) + " at node \"" + s.nodes[ld.node].id + "\"");
    if (!(ld.pf > 0.0 && ld.pf <= 1.0))
      throw InputError("load \"" + s.house_ids[ld.house] + "\" has power factor outside (0, 1]");
  }
  for (const FixedLoad& fl : s.fixed_loads) {
    if (fl.node >= n) throw InputError("fixed load references an unknown node");
    const std::string where = "fixed load at \"" + s.nodes[fl.node].id + "\"";
    if (fl.node == model.slack_) throw InputError(where + " is attached to the slack node");
    if (!s.nodes[fl.node].phases.has(fl.phase))
      throw InputError(where + " uses absent phase " + std::string(1, phase_letter(fl.phase)));
    if (!std::isfinite(fl.p_kw) || !std::isfinite(fl.q_kvar)) throw InputError(where + " is not finite");
  }
  for (const Inverter& inv : s.inverters) {
    if (inv.node >= n || inv.house >= houses) throw InputError("inverter references an unknown node or house");
    if (inv.node == model.slack_)
      throw InputError("inverter \"" + s.house_ids[inv.house] + "\" is attached to the slack node");
    if (!s.nodes[inv.node].phases.has(inv.phase))
      throw InputError("inverter \"" + s.house_ids[inv.house] + "\" uses absent phase " +
                       std::string(1, phase_letter(inv.phase)) + " at node \"" + s.nodes[inv.node].id + "\"");
    if (!(inv.rating_kva > 0.0))
      throw InputError("inverter \"" + s.house_ids[inv.house] + "\" has nonpositive rating");
  }

  model.connection_of_slot_.assign(3 * n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    if (i == model.slack_) continue;
    for (Phase p : kPhases) {
      if (!s.nodes[i].phases.has(p)) continue;
      model.connection_of_slot_[model.slot(i, p)] = static_cast<long>(model.connections_.size());
      model.connections_.push_back({i, p});
    }
    if (s.nodes[i].phases.three_phase()) model.three_phase_nodes_.push_back(i);
  }
  return model;
}

namespace {

Eigen::Matrix3d read_matrix3(const json& j, const std::string& what) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
  if (!j.is_array() || j.size() != 3)
    throw InputError(what + " must be a 3x3 array");
  for (int r = 0; r < 3; ++r) {
    if (!j[r].is_array() || j[r].size() != 3)
      throw InputError(what + " must be a 3x3 array");
    for (int c = 0; c < 3; ++c) {
      if (!j[r][c].is_number()) throw InputError(what + " must contain numbers");
      m(r, c) = j[r][c].get<double>();
    }
  }
  return m;
}

template <class T>
T require(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key))
    throw InputError(where + ": missing field \"" + key + "\"");
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw InputError(where + ": field \"" + key + "\" has the wrong type");
  }
}

std::size_t house_slot(std::vector<std::string>& houses, const std::string& id) {
  for (std::size_t i = 0; i < houses.size(); ++i)
    if (houses[i] == id) return i;
  houses.push_back(id);
  return houses.size() - 1;
}

}  // namespace

FeederModel parse_feeder(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw InputError(std::string("feeder file is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw InputError("feeder file must be a JSON object");

  FeederModel::Spec spec;
  spec.s_base_kva = doc.value("s_base_kva", 1000.0);
  spec.v_min = doc.value("v_min", 0.95);
  spec.v_max = doc.value("v_max", 1.05);
  spec.slack_id = require<std::string>(doc, "slack", "feeder");

  if (!doc.contains("nodes") || !doc["nodes"].is_array())
    throw InputError("feeder: missing array \"nodes\"");
  for (const json& jn : doc["nodes"]) {
    Node nd;
    nd.id = require<std::string>(jn, "id", "node");
    nd.phases = PhaseMask::parse(require<std::string>(jn, "phases", "node \"" + nd.id + "\""));
    nd.base_kv = require<double>(jn, "base_kv", "node \"" + nd.id + "\"");
    spec.nodes.push_back(nd);
  }
  auto node_index = [&](const std::string& id, const std::string& where) {
    for (std::size_t i = 0; i < spec.nodes.size(); ++i)
      if (spec.nodes[i].id == id) return i;
    throw InputError(where + ": unknown node reference \"" + id + "\"");
  };

  if (!doc.contains("branches") || !doc["branches"].is_array())
    throw InputError("feeder: missing array \"branches\"");
  std::size_t k = 0;
  for (const json& jb : doc["branches"]) {
    const std::string where = "branch " + std::to_string(k++);
    Branch br;
    br.from = node_index(require<std::string>(jb, "from", where), where);
    br.to = node_index(require<std::string>(jb, "to", where), where);
    br.transformer = jb.value("transformer", false);
    const double length = jb.value("length", 1.0);
    if (!(length > 0.0)) throw InputError(where + ": length must be positive");
    const Eigen::Matrix3d r = read_matrix3(jb.at("r_matrix"), where + " r_matrix") * length;
    const Eigen::Matrix3d x = read_matrix3(jb.at("x_matrix"), where + " x_matrix") * length;
    Eigen::Matrix3d b = Eigen::Matrix3d::Zero();
    if (jb.contains("b_shunt")) b = read_matrix3(jb["b_shunt"], where + " b_shunt") * length * 1e-6;

    bool present[3];
    for (int i = 0; i < 3; ++i) present[i] = r(i, i) != 0.0 || x(i, i) != 0.0;
    br.phases = PhaseMask(present[0], present[1], present[2]);
    if (br.phases.count() == 0) throw InputError(where + ": impedance matrix is empty");

    // Ohms are referred to the receiving node's voltage base.
    const double kv_ln = spec.nodes[br.to].base_kv / std::sqrt(3.0);
    const double z_base = kv_ln * kv_ln * 1000.0 / spec.s_base_kva;

    std::vector<int> idx;
    for (int i = 0; i < 3; ++i)
      if (present[i]) idx.push_back(i);
    const int m = static_cast<int>(idx.size());
    Eigen::MatrixXcd z(m, m);
    for (int a = 0; a < m; ++a)
      for (int c = 0; c < m; ++c) {
        const int i = idx[a], j = idx[c];
        z(a, c) = Complex(r(i, j), x(i, j)) / z_base;
      }
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        if ((!present[i] || !present[j]) && (r(i, j) != 0.0 || x(i, j) != 0.0 || b(i, j) != 0.0))
          throw InputError(where + ": nonzero entry in an absent phase slot");
    Eigen::FullPivLU<Eigen::MatrixXcd> lu(z);
    if (!lu.isInvertible()) throw InputError(where + ": impedance matrix is singular");
    const Eigen::MatrixXcd y = lu.inverse();
    for (int a = 0; a < m; ++a)
      for (int c = 0; c < m; ++c) {
        br.series_admittance(idx[a], idx[c]) = y(a, c);
        br.shunt_admittance(idx[a], idx[c]) = Complex(0.0, b(idx[a], idx[c]) * z_base);
      }
    spec.branches.push_back(br);
  }

  if (doc.contains("loads")) {
    for (const json& jl : doc["loads"]) {
      Load ld;
      const std::string house = require<std::string>(jl, "house_id", "load");
      const std::string where = "load \"" + house + "\"";
      ld.node = node_index(require<std::string>(jl, "node", where), where);
      const std::string ph = require<std::string>(jl, "phase", where);
      if (ph.size() != 1) throw InputError(where + ": phase must be a single letter");
      ld.phase = parse_phase(ph[0]);
      ld.pf = jl.value("pf", 0.9);
      ld.house = house_slot(spec.house_ids, house);
      spec.loads.push_back(ld);
    }
  }
  if (doc.contains("fixed_loads")) {
    for (const json& jf : doc["fixed_loads"]) {
      FixedLoad fl;
      const std::string where = "fixed load";
      fl.node = node_index(require<std::string>(jf, "node", where), where);
      const std::string ph = require<std::string>(jf, "phase", where);
      if (ph.size() != 1) throw InputError(where + ": phase must be a single letter");
      fl.phase = parse_phase(ph[0]);
      fl.p_kw = jf.value("p_kw", 0.0);
      fl.q_kvar = jf.value("q_kvar", 0.0);
      spec.fixed_loads.push_back(fl);
    }
  }
  if (doc.contains("inverters")) {
    for (const json& ji : doc["inverters"]) {
      Inverter inv;
      const std::string house = require<std::string>(ji, "house_id", "inverter");
      const std::string where = "inverter \"" + house + "\"";
      inv.node = node_index(require<std::string>(ji, "node", where), where);
      const std::string ph = require<std::string>(ji, "phase", where);
      if (ph.size() != 1) throw InputError(where + ": phase must be a single letter");
      inv.phase = parse_phase(ph[0]);
      inv.rating_kva = require<double>(ji, "s_rating_kva", where);
      inv.house = house_slot(spec.house_ids, house);
      spec.inverters.push_back(inv);
    }
  }
  return FeederModel::build(std::move(spec));
}

FeederModel load_feeder(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open feeder file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_feeder(buf.str());
}

AdmittanceMatrix assemble_admittance(const FeederModel& model) {
  const auto n = static_cast<Eigen::Index>(model.slot_count());
  Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
  for (const Branch& br : model.branches()) {
    const auto f = static_cast<Eigen::Index>(3 * br.from);
    const auto t = static_cast<Eigen::Index>(3 * br.to);
    const Matrix3c half_shunt = br.shunt_admittance * 0.5;
    y.block<3, 3>(f, f) += br.series_admittance + half_shunt;
    y.block<3, 3>(t, t) += br.series_admittance + half_shunt;
    y.block<3, 3>(f, t) -= br.series_admittance;
    y.block<3, 3>(t, f) -= br.series_admittance;
  }
  return {y.real(), y.imag()};
}

}  // namespace ccopf
