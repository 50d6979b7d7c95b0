#include "admmpb/stable_op.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <random>
#include <stdexcept>

namespace admmpb {

namespace {

constexpr int kPowerIterations = 100;
constexpr double kSafetyFactor = 1.05;
constexpr int kCheckpointVersion = 1;

struct Offsets {
  int a, b, c, d, gate;
};

Offsets offsets(const OperatorDims& dm) {
  Offsets o{};
  o.a = 0;
  o.b = o.a + dm.n_state * dm.n_state;
  o.c = o.b + dm.n_state * dm.n_in;
  o.d = o.c + dm.n_out * dm.n_state;
  o.gate = o.d + dm.n_out * dm.n_in;
  return o;
}

}  // namespace

int theta_count(const OperatorDims& d) {
  return d.n_state * d.n_state + d.n_state * d.n_in + d.n_out * d.n_state +
         d.n_out * d.n_in + d.n_state;
}

Eigen::Map<const Eigen::MatrixXd> ThetaVector::a_bar() const {
  return {data.data() + offsets(dims).a, dims.n_state, dims.n_state};
}
Eigen::Map<const Eigen::MatrixXd> ThetaVector::b_in() const {
  return {data.data() + offsets(dims).b, dims.n_state, dims.n_in};
}
Eigen::Map<const Eigen::MatrixXd> ThetaVector::c_out() const {
  return {data.data() + offsets(dims).c, dims.n_out, dims.n_state};
}
Eigen::Map<const Eigen::MatrixXd> ThetaVector::d_thru() const {
  return {data.data() + offsets(dims).d, dims.n_out, dims.n_in};
}
Eigen::Map<const Eigen::VectorXd> ThetaVector::gate() const {
  return {data.data() + offsets(dims).gate, dims.n_state};
}
Eigen::Map<Eigen::MatrixXd> ThetaVector::a_bar() {
  return {data.data() + offsets(dims).a, dims.n_state, dims.n_state};
}
Eigen::Map<Eigen::MatrixXd> ThetaVector::b_in() {
  return {data.data() + offsets(dims).b, dims.n_state, dims.n_in};
}
Eigen::Map<Eigen::MatrixXd> ThetaVector::c_out() {
  return {data.data() + offsets(dims).c, dims.n_out, dims.n_state};
}
Eigen::Map<Eigen::MatrixXd> ThetaVector::d_thru() {
  return {data.data() + offsets(dims).d, dims.n_out, dims.n_in};
}
Eigen::Map<Eigen::VectorXd> ThetaVector::gate() {
  return {data.data() + offsets(dims).gate, dims.n_state};
}

ThetaVector init_params(const OperatorDims& dims, double stddev,
                        std::uint64_t seed) {
  ThetaVector th(dims);
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index i = 0; i < th.data.size(); ++i) th.data[i] = dist(gen);
  return th;
}

double spectral_norm_estimate(const Eigen::MatrixXd& a) {
  const Eigen::Index n = a.cols();
  Eigen::VectorXd v = Eigen::VectorXd::Ones(n) * (1.0 / std::sqrt((double)n));
  double lam = 0.0;
  for (int k = 0; k < kPowerIterations; ++k) {
    Eigen::VectorXd t = a * v;
    Eigen::VectorXd z = a.transpose() * t;
    const double nz2 = z.squaredNorm();
    if (nz2 == 0.0) return 0.0;
    lam = v.dot(z);
    const double inv = 1.0 / std::sqrt(nz2);
    v = inv * z;
  }
  return std::sqrt(std::max(lam, 0.0));
}

double sigma_hat(const Eigen::MatrixXd& a) {
  return kSafetyFactor * spectral_norm_estimate(a);
}

OperatorMatrices materialize(const OperatorConfig& cfg, const ThetaVector& th) {
  if (th.dims.n_in != cfg.dims.n_in || th.dims.n_state != cfg.dims.n_state ||
      th.dims.n_out != cfg.dims.n_out) {
    throw std::invalid_argument("stable_op: theta dims do not match config");
  }
  OperatorMatrices m;
  const double sig = sigma_hat(th.a_bar());
  if (sig <= 1.0) {
    m.a = cfg.kappa * th.a_bar();
  } else {
    const double fac = cfg.kappa * (1.0 / sig);
    m.a = fac * th.a_bar();
  }
  m.b = cfg.prescale * th.b_in();
  m.c = Eigen::MatrixXd(th.c_out());
  m.d = cfg.prescale * th.d_thru();
  m.gate = th.gate();
  return m;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> op_step(const OperatorMatrices& m,
                                                    const Eigen::VectorXd& state,
                                                    const Eigen::VectorXd& w) {
  Eigen::VectorXd bw = m.b * w;
  Eigen::VectorXd gated = bw + m.gate.cwiseProduct(bw);
  Eigen::VectorXd drive =
      gated.unaryExpr([](double x) { return std::tanh(x); });
  Eigen::VectorXd next = m.a * state + drive;
  Eigen::VectorXd u = m.c * state + m.d * w;
  return {std::move(next), std::move(u)};
}

double gain_bound(const OperatorConfig& cfg, const ThetaVector& th) {
  OperatorMatrices m = materialize(cfg, th);
  auto spec = [](const Eigen::MatrixXd& x) {
    return Eigen::JacobiSVD<Eigen::MatrixXd>(x).singularValues()(0);
  };
  const double nb = spec(m.b);
  const double nc = spec(m.c);
  const double nd = spec(m.d);
  const double ginf = m.gate.size() > 0 ? m.gate.cwiseAbs().maxCoeff() : 0.0;
  return nd + nc * (nb * (1.0 + ginf)) / (1.0 - cfg.kappa);
}

ThetaLeaves register_theta(ad::Tape& tape, const ThetaVector& th) {
  ThetaLeaves out;
  out.vars[0] = tape.param(th.a_bar());
  out.vars[1] = tape.param(th.b_in());
  out.vars[2] = tape.param(th.c_out());
  out.vars[3] = tape.param(th.d_thru());
  out.vars[4] = tape.param(th.gate());
  return out;
}

namespace {

/** Tape mirror of spectral_norm_estimate; identical arithmetic sequence. */
ad::Var spectral_norm_estimate_t(ad::Tape& tape, ad::Var a, int n) {
  Eigen::VectorXd v0 = Eigen::VectorXd::Ones(n) * (1.0 / std::sqrt((double)n));
  ad::Var v = tape.constant(v0);
  ad::Var lam{};
  for (int k = 0; k < kPowerIterations; ++k) {
    ad::Var t = tape.matvec(a, v);
    ad::Var z = tape.matvec_t(a, t);
    ad::Var nz2 = tape.norm_sq(z);
    lam = tape.dot(v, z);
    v = tape.scale_by(tape.recip(tape.sqrt(nz2)), z);
  }
  return tape.sqrt(lam);
}

}  // namespace

TapeOperator make_tape_operator(ad::Tape& tape, const OperatorConfig& cfg,
                                const ThetaLeaves& th) {
  TapeOperator op;
  op.n_state = cfg.dims.n_state;
  const Eigen::MatrixXd a_bar = tape.value(th.vars[0]);
  const double sig = sigma_hat(a_bar);
  if (sig <= 1.0) {
    op.a = tape.scale(th.vars[0], cfg.kappa);
  } else {
    // Normalization active: differentiate through the norm estimate itself.
    ad::Var est = spectral_norm_estimate_t(tape, th.vars[0], cfg.dims.n_state);
    ad::Var sig_v = tape.scale(est, kSafetyFactor);
    ad::Var fac = tape.scale(tape.recip(sig_v), cfg.kappa);
    op.a = tape.scale_by(fac, th.vars[0]);
  }
  op.b = tape.scale(th.vars[1], cfg.prescale);
  op.c = th.vars[2];
  op.d = tape.scale(th.vars[3], cfg.prescale);
  op.gate = th.vars[4];
  return op;
}

std::pair<ad::Var, ad::Var> op_step_t(ad::Tape& tape, const TapeOperator& op,
                                      ad::Var state, ad::Var w) {
  ad::Var bw = tape.matvec(op.b, w);
  ad::Var gated = tape.add(bw, tape.mul(op.gate, bw));
  ad::Var drive = tape.tanh(gated);
  ad::Var next = tape.add(tape.matvec(op.a, state), drive);
  ad::Var u = tape.add(tape.matvec(op.c, state), tape.matvec(op.d, w));
  return {next, u};
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  nlohmann::json header = {
      {"layout_version", kCheckpointVersion},
      {"n_in", ck.cfg.dims.n_in},
      {"n_state", ck.cfg.dims.n_state},
      {"n_out", ck.cfg.dims.n_out},
      {"kappa", ck.cfg.kappa},
      {"prescale", ck.cfg.prescale},
      {"seed", ck.seed},
      {"count", ck.theta.data.size()},
  };
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path);
  out << header.dump() << "\n";
  out.write(reinterpret_cast<const char*>(ck.theta.data.data()),
            static_cast<std::streamsize>(ck.theta.data.size() * sizeof(double)));
  if (!out) throw std::runtime_error("checkpoint: short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error("checkpoint: missing header in " + path);
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint: malformed header in " + path + ": " +
                             e.what());
  }
  if (header.value("layout_version", -1) != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported layout version in " +
                             path);
  }
  Checkpoint ck;
  ck.cfg.dims.n_in = header.at("n_in").get<int>();
  ck.cfg.dims.n_state = header.at("n_state").get<int>();
  ck.cfg.dims.n_out = header.at("n_out").get<int>();
  ck.cfg.kappa = header.at("kappa").get<double>();
  ck.cfg.prescale = header.at("prescale").get<double>();
  ck.seed = header.at("seed").get<std::uint64_t>();
  const auto count = header.at("count").get<Eigen::Index>();
  if (count != theta_count(ck.cfg.dims)) {
    throw std::runtime_error("checkpoint: parameter count mismatch in " + path);
  }
  ck.theta = ThetaVector(ck.cfg.dims);
  in.read(reinterpret_cast<char*>(ck.theta.data.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(count * sizeof(double))) {
    throw std::runtime_error("checkpoint: truncated parameter block in " +
                             path);
  }
  return ck;
}

}  // namespace admmpb
