#include "actionmatch/field.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

namespace actionmatch {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMatrix>;
using MatMap = Eigen::Map<RowMatrix>;

// Activation and its first three derivatives, elementwise.
void activate(Activation act, const Eigen::MatrixXd& a, Eigen::MatrixXd& y, Eigen::MatrixXd& d1,
              Eigen::MatrixXd& d2, Eigen::MatrixXd& d3) {
  y.resize(a.rows(), a.cols());
  d1.resizeLike(y);
  d2.resizeLike(y);
  d3.resizeLike(y);
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double z = a.data()[i];
    double v, g1, g2, g3;
    if (act == Activation::tanh) {
      v = std::tanh(z);
      g1 = 1.0 - v * v;
      g2 = -2.0 * v * g1;
      g3 = -2.0 * g1 * g1 + 4.0 * v * v * g1;
    } else {
      v = z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
      const double p = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
      g1 = p;
      g2 = p * (1.0 - p);
      g3 = g2 * (1.0 - 2.0 * p);
    }
    y.data()[i] = v;
    d1.data()[i] = g1;
    d2.data()[i] = g2;
    d3.data()[i] = g3;
  }
}

void require_finite_query(const JetQuery& q, int dim) {
  if (q.x.cols() != dim)
    throw InvalidArgument("point dimension " + std::to_string(q.x.cols()) + " does not match field dimension " +
                          std::to_string(dim));
  if (q.times.size() != q.x.rows())
    throw InvalidArgument("times and points have different lengths");
  if (!q.x.allFinite() || !q.times.allFinite()) throw InvalidArgument("non-finite evaluation point");
  if (q.order == JetOrder::second) {
    for (const auto& dir : q.directions)
      if (dir.rows() != q.x.rows() || dir.cols() != dim)
        throw InvalidArgument("direction block shape does not match the query");
  }
}

}  // namespace

Activation parse_activation(std::string_view name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "softplus") return Activation::softplus;
  if (name == "relu" || name == "leaky_relu" || name == "hardtanh" || name == "elu")
    throw InvalidArgument("activation '" + std::string(name) +
                          "' is not twice differentiable; its Laplacian vanishes almost everywhere. "
                          "Use tanh or softplus");
  throw InvalidArgument("unknown activation '" + std::string(name) + "' (expected tanh or softplus)");
}

std::string_view activation_name(Activation act) {
  return act == Activation::tanh ? "tanh" : "softplus";
}

FieldJet JetBatch::point(Eigen::Index i) const {
  FieldJet jet;
  jet.value = value(i);
  if (grad.rows() > 0) jet.spatial_grad = grad.row(i).transpose();
  if (time_deriv.size() > 0) jet.time_deriv = time_deriv(i);
  if (curvature.rows() > 0) jet.laplacian = curvature.row(i).sum();
  return jet;
}

void ActionField::set_params(std::span<const double> params) {
  if (!params.empty()) throw InvalidArgument("field has no trainable parameters");
}

// ---------------------------------------------------------------------------
// MLP

std::size_t MlpField::count_params(int input_dim, const std::vector<int>& hidden_widths) {
  std::size_t total = 0;
  std::size_t in = static_cast<std::size_t>(input_dim) + 1;
  for (int w : hidden_widths) {
    total += in * static_cast<std::size_t>(w) + static_cast<std::size_t>(w);
    in = static_cast<std::size_t>(w);
  }
  return total + in + 1;
}

MlpField::MlpField(int input_dim, std::vector<int> hidden_widths, Activation activation, std::uint64_t seed)
    : input_dim_(input_dim), widths_(std::move(hidden_widths)), activation_(activation), seed_(seed) {
  if (input_dim_ < 1) throw InvalidArgument("input_dim must be >= 1");
  if (widths_.empty()) throw InvalidArgument("hidden_widths must be nonempty");
  for (int w : widths_)
    if (w < 1) throw InvalidArgument("hidden widths must be positive (got " + std::to_string(w) + ")");

  params_.resize(count_params(input_dim_, widths_));
  Rng rng(seed_);
  std::size_t offset = 0;
  int in = input_dim_ + 1;
  auto fill_layer = [&](int fan_in, int fan_out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (int i = 0; i < fan_in * fan_out; ++i) params_[offset++] = dist(rng);
    for (int i = 0; i < fan_out; ++i) params_[offset++] = 0.0;
  };
  for (int w : widths_) {
    fill_layer(in, w);
    in = w;
  }
  fill_layer(in, 1);
}

void MlpField::set_params(std::span<const double> params) {
  if (params.size() != params_.size())
    throw InvalidArgument("parameter count mismatch: expected " + std::to_string(params_.size()) + ", got " +
                          std::to_string(params.size()));
  params_.assign(params.begin(), params.end());
}

std::shared_ptr<MlpField> new_mlp_field(int input_dim, std::vector<int> hidden_widths, Activation activation,
                                        std::uint64_t seed) {
  return std::make_shared<MlpField>(input_dim, std::move(hidden_widths), activation, seed);
}

// Activations are stored feature-major: one column per point. First-order
// tangents for point p occupy columns p*T .. p*T+T-1 (axes x_0..x_{d-1}, t, then
// any custom directions); second-order tangents occupy p*S .. p*S+S-1.
struct MlpField::Forward {
  Eigen::Index n = 0;
  Eigen::Index T = 0;
  Eigen::Index S = 0;
  std::vector<Eigen::Index> second_of;  // S entries: tangent index carrying each second-order direction
  Eigen::MatrixXd input;                // (d+1) x n
  Eigen::MatrixXd input_tangents;       // (d+1) x nT
  std::vector<Eigen::MatrixXd> A, H, D1, D2, D3, TA, TH, SA, SH;
  JetBatch jets;
};

MlpField::Forward MlpField::run_forward(const JetQuery& q) const {
  require_finite_query(q, input_dim_);
  const int d = input_dim_;
  Forward f;
  f.n = q.size();
  const bool custom = q.order == JetOrder::second && !q.axis_directions();
  if (q.order != JetOrder::value) f.T = d + 1 + (custom ? static_cast<Eigen::Index>(q.directions.size()) : 0);
  if (q.order == JetOrder::second) {
    f.S = custom ? static_cast<Eigen::Index>(q.directions.size()) : d;
    for (Eigen::Index j = 0; j < f.S; ++j) f.second_of.push_back(custom ? d + 1 + j : j);
  }
  const Eigen::Index n = f.n, T = f.T, S = f.S;

  f.input.resize(d + 1, n);
  f.input.topRows(d) = q.x.transpose();
  f.input.row(d) = q.times.transpose();
  f.input_tangents = Eigen::MatrixXd::Zero(d + 1, n * T);
  for (Eigen::Index p = 0; p < n && T > 0; ++p) {
    for (int k = 0; k <= d; ++k) f.input_tangents(k, p * T + k) = 1.0;
    if (custom)
      for (std::size_t j = 0; j < q.directions.size(); ++j)
        f.input_tangents.block(0, p * T + d + 1 + static_cast<Eigen::Index>(j), d, 1) =
            q.directions[j].row(p).transpose();
  }

  const std::size_t L = widths_.size();
  f.A.resize(L), f.H.resize(L), f.D1.resize(L), f.D2.resize(L), f.D3.resize(L);
  f.TA.resize(L), f.TH.resize(L), f.SA.resize(L), f.SH.resize(L);

  std::size_t offset = 0;
  int in = d + 1;
  for (std::size_t l = 0; l < L; ++l) {
    const int out = widths_[l];
    ConstMatMap W(params_.data() + offset, out, in);
    Eigen::Map<const Vector> b(params_.data() + offset + static_cast<std::size_t>(out * in), out);
    offset += static_cast<std::size_t>(out * in + out);

    const Eigen::MatrixXd& prev_h = l == 0 ? f.input : f.H[l - 1];
    const Eigen::MatrixXd& prev_th = l == 0 ? f.input_tangents : f.TH[l - 1];
    f.A[l] = (W * prev_h).colwise() + b;
    activate(activation_, f.A[l], f.H[l], f.D1[l], f.D2[l], f.D3[l]);

    f.TA[l] = W * prev_th;
    f.TH[l].resize(out, n * T);
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index k = 0; k < T; ++k)
        f.TH[l].col(p * T + k) = f.D1[l].col(p).cwiseProduct(f.TA[l].col(p * T + k));

    if (l == 0)
      f.SA[l] = Eigen::MatrixXd::Zero(out, n * S);
    else
      f.SA[l] = W * f.SH[l - 1];
    f.SH[l].resize(out, n * S);
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index j = 0; j < S; ++j) {
        const auto ta = f.TA[l].col(p * T + f.second_of[static_cast<std::size_t>(j)]);
        f.SH[l].col(p * S + j) = f.D2[l].col(p).cwiseProduct(ta.cwiseProduct(ta)) +
                                 f.D1[l].col(p).cwiseProduct(f.SA[l].col(p * S + j));
      }
    in = out;
  }

  Eigen::Map<const Vector> w_out(params_.data() + offset, in);
  const double b_out = params_[offset + static_cast<std::size_t>(in)];
  f.jets.value = (f.H[L - 1].transpose() * w_out).array() + b_out;
  if (T > 0) {
    const Vector first = f.TH[L - 1].transpose() * w_out;
    f.jets.grad.resize(n, d);
    f.jets.time_deriv.resize(n);
    for (Eigen::Index p = 0; p < n; ++p) {
      for (int k = 0; k < d; ++k) f.jets.grad(p, k) = first(p * T + k);
      f.jets.time_deriv(p) = first(p * T + d);
    }
  }
  if (S > 0) {
    const Vector second = f.SH[L - 1].transpose() * w_out;
    f.jets.curvature = Eigen::Map<const RowMatrix>(second.data(), n, S);
  }
  return f;
}

JetBatch MlpField::evaluate(const JetQuery& query) const { return run_forward(query).jets; }

Linearized MlpField::linearize(const JetQuery& query) const {
  auto fwd = std::make_shared<Forward>(run_forward(query));
  Linearized out;
  out.jets = fwd->jets;
  out.backprop = [this, fwd](const JetBatch& adj, std::span<double> grad) {
    if (grad.size() != params_.size()) throw InvalidArgument("gradient buffer has wrong length");
    const Forward& f = *fwd;
    const int d = input_dim_;
    const Eigen::Index n = f.n, T = f.T, S = f.S;
    const std::size_t L = widths_.size();

    // Cotangents of the network outputs.
    Vector g_value = adj.value.size() > 0 ? Vector(adj.value) : Vector::Zero(n);
    Vector g_first = Vector::Zero(n * T);
    if (T > 0) {
      for (Eigen::Index p = 0; p < n; ++p) {
        if (adj.grad.rows() > 0)
          for (int k = 0; k < d; ++k) g_first(p * T + k) = adj.grad(p, k);
        if (adj.time_deriv.size() > 0) g_first(p * T + d) = adj.time_deriv(p);
      }
    }
    Vector g_second = Vector::Zero(n * S);
    if (S > 0 && adj.curvature.rows() > 0)
      for (Eigen::Index p = 0; p < n; ++p)
        for (Eigen::Index j = 0; j < S; ++j) g_second(p * S + j) = adj.curvature(p, j);

    // Offsets of each layer's parameters.
    std::vector<std::size_t> offsets(L + 1);
    std::size_t offset = 0;
    int in = d + 1;
    for (std::size_t l = 0; l < L; ++l) {
      offsets[l] = offset;
      offset += static_cast<std::size_t>(widths_[l] * in + widths_[l]);
      in = widths_[l];
    }
    offsets[L] = offset;

    const int last = widths_.back();
    Eigen::Map<const Vector> w_out(params_.data() + offsets[L], last);
    Eigen::Map<Vector> gw_out(grad.data() + offsets[L], last);
    gw_out += f.H[L - 1] * g_value;
    if (T > 0) gw_out += f.TH[L - 1] * g_first;
    if (S > 0) gw_out += f.SH[L - 1] * g_second;
    grad[offsets[L] + static_cast<std::size_t>(last)] += g_value.sum();

    Eigen::MatrixXd h_bar = w_out * g_value.transpose();
    Eigen::MatrixXd th_bar = w_out * g_first.transpose();
    Eigen::MatrixXd sh_bar = w_out * g_second.transpose();

    for (std::size_t li = L; li-- > 0;) {
      const int out = widths_[li];
      const int fan_in = li == 0 ? d + 1 : widths_[li - 1];
      const auto& D1 = f.D1[li];
      const auto& D2 = f.D2[li];
      const auto& D3 = f.D3[li];
      const auto& TA = f.TA[li];
      const auto& SA = f.SA[li];

      Eigen::MatrixXd a_bar = h_bar.cwiseProduct(D1);
      Eigen::MatrixXd ta_bar(out, n * T);
      for (Eigen::Index p = 0; p < n; ++p)
        for (Eigen::Index k = 0; k < T; ++k) {
          const Eigen::Index c = p * T + k;
          ta_bar.col(c) = th_bar.col(c).cwiseProduct(D1.col(p));
          a_bar.col(p) += th_bar.col(c).cwiseProduct(TA.col(c)).cwiseProduct(D2.col(p));
        }
      Eigen::MatrixXd sa_bar(out, n * S);
      for (Eigen::Index p = 0; p < n; ++p)
        for (Eigen::Index j = 0; j < S; ++j) {
          const Eigen::Index c = p * S + j;
          const Eigen::Index k = p * T + f.second_of[static_cast<std::size_t>(j)];
          const auto ta = TA.col(k);
          sa_bar.col(c) = sh_bar.col(c).cwiseProduct(D1.col(p));
          ta_bar.col(k) += 2.0 * sh_bar.col(c).cwiseProduct(D2.col(p)).cwiseProduct(ta);
          a_bar.col(p) += sh_bar.col(c).cwiseProduct(D3.col(p).cwiseProduct(ta.cwiseProduct(ta)) +
                                                     D2.col(p).cwiseProduct(SA.col(c)));
        }

      const Eigen::MatrixXd& prev_h = li == 0 ? f.input : f.H[li - 1];
      const Eigen::MatrixXd& prev_th = li == 0 ? f.input_tangents : f.TH[li - 1];
      MatMap gW(grad.data() + offsets[li], out, fan_in);
      Eigen::Map<Vector> gb(grad.data() + offsets[li] + static_cast<std::size_t>(out * fan_in), out);
      gW.noalias() += a_bar * prev_h.transpose();
      if (T > 0) gW.noalias() += ta_bar * prev_th.transpose();
      if (S > 0 && li > 0) gW.noalias() += sa_bar * f.SH[li - 1].transpose();
      gb += a_bar.rowwise().sum();

      if (li > 0) {
        ConstMatMap W(params_.data() + offsets[li], out, fan_in);
        h_bar = W.transpose() * a_bar;
        th_bar = W.transpose() * ta_bar;
        sh_bar = W.transpose() * sa_bar;
      }
    }
  };
  return out;
}

// ---------------------------------------------------------------------------
// Closed-form fields

Linearized AnalyticField::linearize(const JetQuery& q) const {
  require_finite_query(q, dim_);
  const Eigen::Index n = q.size();
  Linearized out;
  JetBatch& jets = out.jets;
  jets.value.resize(n);
  const bool first = q.order != JetOrder::value;
  const bool second = q.order == JetOrder::second;
  const Eigen::Index m = second ? (q.axis_directions() ? dim_ : static_cast<Eigen::Index>(q.directions.size())) : 0;
  if (first) {
    jets.grad.resize(n, dim_);
    jets.time_deriv.resize(n);
  }
  if (second) jets.curvature.resize(n, m);

  Vector x(dim_), grad(dim_);
  Eigen::MatrixXd hess(dim_, dim_);
  for (Eigen::Index i = 0; i < n; ++i) {
    x = q.x.row(i).transpose();
    double value = 0.0, dt = 0.0;
    grad.setZero();
    hess.setZero();
    eval_point(q.times(i), x, value, grad, dt, hess);
    jets.value(i) = value;
    if (first) {
      jets.grad.row(i) = grad.transpose();
      jets.time_deriv(i) = dt;
    }
    if (second) {
      for (Eigen::Index j = 0; j < m; ++j) {
        if (q.axis_directions()) {
          jets.curvature(i, j) = hess(j, j);
        } else {
          const Vector v = q.directions[static_cast<std::size_t>(j)].row(i).transpose();
          jets.curvature(i, j) = v.dot(hess * v);
        }
      }
    }
  }
  out.backprop = [](const JetBatch&, std::span<double>) {};
  return out;
}

void ConstantField::eval_point(double, const Vector&, double& value, Vector&, double&, Eigen::MatrixXd&) const {
  value = c_;
}

void LinearField::eval_point(double, const Vector& x, double& value, Vector& grad, double&,
                             Eigen::MatrixXd&) const {
  value = a_.dot(x);
  grad = a_;
}

void QuadraticField::eval_point(double t, const Vector& x, double& value, Vector& grad, double& time_deriv,
                                Eigen::MatrixXd& hessian) const {
  const double a = a0_ + a1_ * t;
  const double sq = x.squaredNorm();
  value = 0.5 * a * sq;
  grad = a * x;
  time_deriv = 0.5 * a1_ * sq;
  hessian = a * Eigen::MatrixXd::Identity(x.size(), x.size());
}

Linearized ShiftedField::linearize(const JetQuery& query) const {
  Linearized lin = base_->linearize(query);
  lin.jets.value.array() += c_;
  return lin;
}

// ---------------------------------------------------------------------------

JetQuery make_query(const Vector& times, const Points& x, JetOrder order) {
  JetQuery q;
  q.times = times;
  q.x = x;
  q.order = order;
  return q;
}

JetQuery make_query(double t, const Points& x, JetOrder order) {
  return make_query(Vector::Constant(x.rows(), t), x, order);
}

FieldJet eval_bundle(const ActionField& field, double t, const Vector& x) {
  if (x.size() != field.dim())
    throw InvalidArgument("point has dimension " + std::to_string(x.size()) + ", field expects " +
                          std::to_string(field.dim()));
  if (!std::isfinite(t) || !x.allFinite()) throw InvalidArgument("non-finite evaluation point");
  Vector times(1);
  times(0) = t;
  const JetBatch jets = field.evaluate(make_query(times, x.transpose(), JetOrder::second));
  FieldJet jet = jets.point(0);
  if (!std::isfinite(jet.value)) throw NumericError("non-finite value");
  if (!jet.spatial_grad.allFinite()) throw NumericError("non-finite spatial_grad");
  if (!std::isfinite(jet.time_deriv)) throw NumericError("non-finite time_deriv");
  if (!std::isfinite(jet.laplacian)) throw NumericError("non-finite laplacian");
  return jet;
}

namespace {

// Name of the first non-finite jet entry, with its row, or empty.
std::string first_bad_term(const JetBatch& jets, Eigen::Index& row) {
  for (row = 0; row < jets.value.size(); ++row)
    if (!std::isfinite(jets.value(row))) return "value";
  for (row = 0; row < jets.grad.rows(); ++row)
    if (!jets.grad.row(row).allFinite()) return "spatial_grad";
  for (row = 0; row < jets.time_deriv.size(); ++row)
    if (!std::isfinite(jets.time_deriv(row))) return "time_deriv";
  for (row = 0; row < jets.curvature.rows(); ++row)
    if (!jets.curvature.row(row).allFinite()) return "laplacian";
  return {};
}

void check_jets(const JetBatch& jets, std::size_t query, const std::string& role, const PointLabeler& label) {
  Eigen::Index row = 0;
  const std::string term = first_bad_term(jets, row);
  if (term.empty()) return;
  std::string where = label ? label(query, row) : "query " + std::to_string(query) + " row " + std::to_string(row);
  throw NumericError("non-finite " + term + " " + role + " at " + where);
}

}  // namespace

LossGrad loss_and_param_grad(const ActionField& field, std::span<const JetQuery> queries,
                             const BatchFunctional& functional, const PointLabeler& describe_point) {
  std::vector<Linearized> lins;
  std::vector<JetBatch> jets;
  lins.reserve(queries.size());
  jets.reserve(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    lins.push_back(field.linearize(queries[i]));
    check_jets(lins.back().jets, i, "jet", describe_point);
    jets.push_back(lins.back().jets);
  }

  LossGrad out;
  out.grad.assign(field.param_count(), 0.0);
  if (queries.empty()) return out;

  FunctionalResult res = functional(jets);
  if (!std::isfinite(res.value)) throw NumericError("non-finite functional value");
  if (res.adjoints.size() != queries.size()) throw InvalidArgument("functional must return one adjoint per query");
  for (std::size_t i = 0; i < queries.size(); ++i) {
    check_jets(res.adjoints[i], i, "adjoint", describe_point);
    lins[i].backprop(res.adjoints[i], out.grad);
  }
  for (double g : out.grad)
    if (!std::isfinite(g)) throw NumericError("non-finite parameter gradient");
  out.value = res.value;
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

std::string field_to_json(const MlpField& field) {
  nlohmann::json j;
  j["format"] = "actionmatch-field";
  j["version"] = 1;
  j["input_dim"] = field.dim();
  j["hidden_widths"] = field.hidden_widths();
  j["activation"] = activation_name(field.activation());
  j["seed"] = field.seed();
  j["params"] = std::vector<double>(field.params().begin(), field.params().end());
  return j.dump();
}

std::shared_ptr<MlpField> field_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed field checkpoint: ") + e.what());
  }
  if (j.value("format", "") != "actionmatch-field") throw InvalidArgument("not an actionmatch field checkpoint");
  try {
    auto field = new_mlp_field(j.at("input_dim").get<int>(), j.at("hidden_widths").get<std::vector<int>>(),
                               parse_activation(j.at("activation").get<std::string>()),
                               j.at("seed").get<std::uint64_t>());
    field->set_params(j.at("params").get<std::vector<double>>());
    return field;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed field checkpoint: ") + e.what());
  }
}

void save_field(const MlpField& field, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot write checkpoint " + path);
  out << field_to_json(field) << '\n';
}

std::shared_ptr<MlpField> load_field(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot read checkpoint " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return field_from_json(ss.str());
}

}  // namespace actionmatch
