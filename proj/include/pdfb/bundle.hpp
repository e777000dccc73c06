#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pdfb/errors.hpp"
#include "pdfb/linops.hpp"
#include "pdfb/prox.hpp"
#include "pdfb/saddle.hpp"

namespace pdfb {

/// A problem stored on disk. Directory layout:
///
///   meta.txt    key=value lines (loss kind, dimensions, prox spec as JSON)
///   K.txt       K in triplet format
///   A.txt       data matrix in triplet format (quadratic and logistic only)
///   b.txt       targets, one value per line
///   x_true.txt  ground truth, one value per line (optional)
struct Bundle {
  SaddleProblem prob;
  std::optional<Vector> x_true;
  std::map<std::string, std::string> meta;
};

namespace detail {

inline std::string atomic_tmp_name(const std::filesystem::path& p) {
  return p.string() + ".tmp";
}

}  // namespace detail

/// Writes text to path through a temporary file and a rename, so readers
/// never observe a partial file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  const std::string tmp = detail::atomic_tmp_name(path);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp + " for writing");
    out << content;
    out.flush();
    if (!out) throw IoError("write to " + tmp + " failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp + " to " + path.string() + ": " + ec.message());
}

inline std::string format_vector(const Vector& v) {
  std::ostringstream out;
  out << std::setprecision(17);
  for (Index i = 0; i < v.size(); ++i) out << v[i] << '\n';
  return out.str();
}

inline Vector parse_vector(std::istream& in, const std::string& what) {
  std::vector<double> vals;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '%' || line[first] == '#') continue;
    std::istringstream ls(line);
    double v;
    if (!(ls >> v)) throw FormatError(what + ": bad value '" + line + "'");
    vals.push_back(v);
  }
  return Eigen::Map<const Vector>(vals.data(), static_cast<Index>(vals.size()));
}

inline Vector read_vector_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_vector(in, path.string());
}

inline nlohmann::json prox_spec_to_json(const ConjugateProxSpec& s) {
  using K = ConjugateProxSpec::Kind;
  nlohmann::json j;
  switch (s.kind()) {
    case K::box:
      j = {{"kind", "box"}, {"lambda", s.lambda()}, {"dim", s.dim()}};
      break;
    case K::l2_ball:
      j = {{"kind", "l2_ball"}, {"lambda", s.lambda()}, {"dim", s.dim()}};
      break;
    case K::l1_ball:
      j = {{"kind", "l1_ball"}, {"lambda", s.lambda()}, {"dim", s.dim()}};
      break;
    case K::group_l2_balls: {
      std::vector<Index> sizes;
      for (const auto& r : s.groups().ranges) sizes.push_back(r.second - r.first);
      j = {{"kind", "group_l2_balls"}, {"sizes", sizes}, {"weights", s.weights()}};
      break;
    }
    case K::hinge: {
      const Vector& b = s.labels();
      j = {{"kind", "hinge"}, {"labels", std::vector<double>(b.data(), b.data() + b.size())}};
      break;
    }
    case K::zero_conj:
      j = {{"kind", "zero_conj"}, {"dim", s.dim()}};
      break;
    case K::composite: {
      nlohmann::json parts = nlohmann::json::array();
      for (const auto& b : s.blocks()) parts.push_back(prox_spec_to_json(b.spec));
      j = {{"kind", "composite"}, {"parts", parts}};
      break;
    }
  }
  return j;
}

inline ConjugateProxSpec prox_spec_from_json(const nlohmann::json& j) {
  try {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "box") return ConjugateProxSpec::box(j.at("lambda").get<double>(), j.at("dim").get<Index>());
    if (kind == "l2_ball") return ConjugateProxSpec::l2_ball(j.at("lambda").get<double>(), j.at("dim").get<Index>());
    if (kind == "l1_ball") return ConjugateProxSpec::l1_ball(j.at("lambda").get<double>(), j.at("dim").get<Index>());
    if (kind == "group_l2_balls")
      return ConjugateProxSpec::group_l2_balls(GroupPartition::from_sizes(j.at("sizes").get<std::vector<Index>>()),
                                               j.at("weights").get<std::vector<double>>());
    if (kind == "hinge") {
      const auto v = j.at("labels").get<std::vector<double>>();
      return ConjugateProxSpec::hinge(Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size())));
    }
    if (kind == "zero_conj") return ConjugateProxSpec::zero_conj(j.at("dim").get<Index>());
    if (kind == "composite") {
      std::vector<ConjugateProxSpec> parts;
      for (const auto& p : j.at("parts")) parts.push_back(prox_spec_from_json(p));
      return ConjugateProxSpec::composite(parts);
    }
    throw FormatError("prox spec: unknown kind '" + kind + "'");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("prox spec: ") + e.what());
  }
}

inline std::map<std::string, std::string> read_meta(std::istream& in, const std::string& what) {
  std::map<std::string, std::string> meta;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(what + ": expected key=value, got '" + line + "'");
    meta[line.substr(first, eq - first)] = line.substr(eq + 1);
  }
  return meta;
}

/// Stores prob under dir. Losses without a data matrix other than the zero
/// loss, and problems with a reporting override, have no file form.
inline void write_bundle(const std::filesystem::path& dir, const SaddleProblem& prob,
                         const std::optional<Vector>& x_true = std::nullopt,
                         const std::map<std::string, std::string>& extra = {}) {
  const auto kind = prob.loss.kind;
  if (kind == SmoothLoss::Kind::custom || prob.objective_override)
    throw FormatError("write_bundle: problem has a custom loss or objective and cannot be serialized");
  std::filesystem::create_directories(dir);
  std::map<std::string, std::string> meta = extra;
  meta["loss"] = kind == SmoothLoss::Kind::zero ? "zero" : kind == SmoothLoss::Kind::quadratic ? "quadratic" : "logistic";
  meta["p"] = std::to_string(prob.p());
  meta["l"] = std::to_string(prob.l());
  meta["hconj"] = prox_spec_to_json(prob.hconj).dump();
  std::ostringstream m;
  for (const auto& [k, v] : meta) m << k << '=' << v << '\n';
  write_file_atomic(dir / "meta.txt", m.str());

  std::ostringstream k;
  write_triplets(k, prob.K.to_sparse());
  write_file_atomic(dir / "K.txt", k.str());
  if (prob.loss.data) {
    std::ostringstream a;
    write_triplets(a, prob.loss.data->to_sparse());
    write_file_atomic(dir / "A.txt", a.str());
    write_file_atomic(dir / "b.txt", format_vector(prob.loss.target));
  }
  if (x_true) write_file_atomic(dir / "x_true.txt", format_vector(*x_true));
}

inline Bundle read_bundle(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "meta.txt");
  if (!mf) throw IoError("read_bundle: cannot open " + (dir / "meta.txt").string());
  Bundle out;
  out.meta = read_meta(mf, (dir / "meta.txt").string());
  auto need = [&](const std::string& key) -> const std::string& {
    auto it = out.meta.find(key);
    if (it == out.meta.end()) throw FormatError("read_bundle: meta.txt lacks '" + key + "'");
    return it->second;
  };
  nlohmann::json hj;
  try {
    hj = nlohmann::json::parse(need("hconj"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("read_bundle: hconj is not valid JSON: ") + e.what());
  }
  const ConjugateProxSpec hconj = prox_spec_from_json(hj);
  const LinearOperator k = LinearOperator::sparse(read_triplets_file((dir / "K.txt").string()));
  const std::string& loss = need("loss");
  SmoothLoss f;
  if (loss == "zero") {
    f = zero_loss(k.cols());
  } else if (loss == "quadratic" || loss == "logistic") {
    const LinearOperator a = LinearOperator::sparse(read_triplets_file((dir / "A.txt").string()));
    const Vector b = read_vector_file(dir / "b.txt");
    f = loss == "quadratic" ? quadratic_loss(a, b) : logistic_loss(a, b);
  } else {
    throw FormatError("read_bundle: unknown loss '" + loss + "'");
  }
  out.prob = make_problem(std::move(f), k, hconj);
  if (std::filesystem::exists(dir / "x_true.txt")) out.x_true = read_vector_file(dir / "x_true.txt");
  return out;
}

}  // namespace pdfb
