#pragma once

#include "actionmatch/types.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace actionmatch {

// Smooth activations only: the Laplacian and the likelihood divergence need C^2 networks.
enum class Activation { tanh, softplus };

Activation parse_activation(std::string_view name);
std::string_view activation_name(Activation act);

// Value and derivatives of s(t, x) at a single point.
struct FieldJet {
  double value = 0.0;
  Vector spatial_grad;
  double time_deriv = 0.0;
  double laplacian = 0.0;
};

enum class JetOrder { value, first, second };

// A batch of evaluation points. For JetOrder::second, `directions` lists the
// directions v (one n x d matrix per direction) along which the second
// derivative v^T H v is taken; when empty the coordinate axes are used and the
// curvature columns sum to the Laplacian.
struct JetQuery {
  Vector times;
  Points x;
  JetOrder order = JetOrder::second;
  std::vector<Points> directions;

  Eigen::Index size() const { return x.rows(); }
  bool axis_directions() const { return directions.empty(); }
};

// Batched jets, also used for adjoints (cotangents) of the same shape. Blocks
// that were not requested are empty; an empty adjoint block means zero.
struct JetBatch {
  Vector value;       // n
  Points grad;        // n x d
  Vector time_deriv;  // n
  Points curvature;   // n x m

  Vector laplacian() const { return curvature.rowwise().sum(); }
  FieldJet point(Eigen::Index i) const;
};

using Backprop = std::function<void(const JetBatch& adjoint, std::span<double> grad)>;

struct Linearized {
  JetBatch jets;
  // Accumulates d<adjoint, jets>/d(params) into grad.
  Backprop backprop;
};

// Scalar field s(t, x) over R x R^d with exact nested derivatives.
// Evaluation is const and safe to call concurrently.
class ActionField {
 public:
  virtual ~ActionField() = default;

  virtual int dim() const = 0;
  virtual std::size_t param_count() const { return 0; }
  virtual std::span<const double> params() const { return {}; }
  virtual void set_params(std::span<const double> params);

  virtual Linearized linearize(const JetQuery& query) const = 0;
  virtual JetBatch evaluate(const JetQuery& query) const { return linearize(query).jets; }
};

using FieldPtr = std::shared_ptr<const ActionField>;

class MlpField final : public ActionField {
 public:
  MlpField(int input_dim, std::vector<int> hidden_widths, Activation activation, std::uint64_t seed);

  int dim() const override { return input_dim_; }
  std::size_t param_count() const override { return params_.size(); }
  std::span<const double> params() const override { return params_; }
  void set_params(std::span<const double> params) override;

  Linearized linearize(const JetQuery& query) const override;
  JetBatch evaluate(const JetQuery& query) const override;

  const std::vector<int>& hidden_widths() const { return widths_; }
  Activation activation() const { return activation_; }
  std::uint64_t seed() const { return seed_; }

  // (d+1 inputs) -> widths -> 1, weights and bias per layer.
  static std::size_t count_params(int input_dim, const std::vector<int>& hidden_widths);

 private:
  struct Forward;
  Forward run_forward(const JetQuery& query) const;

  int input_dim_;
  std::vector<int> widths_;
  Activation activation_;
  std::uint64_t seed_;
  std::vector<double> params_;
};

std::shared_ptr<MlpField> new_mlp_field(int input_dim, std::vector<int> hidden_widths,
                                        Activation activation, std::uint64_t seed);

// Closed-form fields. They carry no trainable parameters.
class AnalyticField : public ActionField {
 public:
  explicit AnalyticField(int dim) : dim_(dim) {}
  int dim() const override { return dim_; }
  Linearized linearize(const JetQuery& query) const override;

  // value, gradient, time derivative and Hessian at (t, x).
  virtual void eval_point(double t, const Vector& x, double& value, Vector& grad,
                          double& time_deriv, Eigen::MatrixXd& hessian) const = 0;

 private:
  int dim_;
};

class ConstantField final : public AnalyticField {
 public:
  ConstantField(int dim, double c) : AnalyticField(dim), c_(c) {}
  void eval_point(double t, const Vector& x, double& value, Vector& grad, double& time_deriv,
                  Eigen::MatrixXd& hessian) const override;

 private:
  double c_;
};

// s = a . x
class LinearField final : public AnalyticField {
 public:
  explicit LinearField(Vector a) : AnalyticField(static_cast<int>(a.size())), a_(std::move(a)) {}
  void eval_point(double t, const Vector& x, double& value, Vector& grad, double& time_deriv,
                  Eigen::MatrixXd& hessian) const override;

 private:
  Vector a_;
};

// s = 1/2 (a0 + a1 t) |x|^2
class QuadraticField final : public AnalyticField {
 public:
  QuadraticField(int dim, double a0, double a1) : AnalyticField(dim), a0_(a0), a1_(a1) {}
  void eval_point(double t, const Vector& x, double& value, Vector& grad, double& time_deriv,
                  Eigen::MatrixXd& hessian) const override;

 private:
  double a0_, a1_;
};

// Field defined by a callback; used for the true actions of analytic paths.
class CallbackField final : public AnalyticField {
 public:
  using Fn = std::function<void(double t, const Vector& x, double& value, Vector& grad,
                                double& time_deriv, Eigen::MatrixXd& hessian)>;
  CallbackField(int dim, Fn fn) : AnalyticField(dim), fn_(std::move(fn)) {}
  void eval_point(double t, const Vector& x, double& value, Vector& grad, double& time_deriv,
                  Eigen::MatrixXd& hessian) const override {
    fn_(t, x, value, grad, time_deriv, hessian);
  }

 private:
  Fn fn_;
};

// base + c. Shares the base field's parameters.
class ShiftedField final : public ActionField {
 public:
  ShiftedField(FieldPtr base, double c) : base_(std::move(base)), c_(c) {}
  int dim() const override { return base_->dim(); }
  std::size_t param_count() const override { return base_->param_count(); }
  std::span<const double> params() const override { return base_->params(); }
  Linearized linearize(const JetQuery& query) const override;

 private:
  FieldPtr base_;
  double c_;
};

// Single-point evaluation with coordinate-axis curvature.
FieldJet eval_bundle(const ActionField& field, double t, const Vector& x);

JetQuery make_query(const Vector& times, const Points& x, JetOrder order);
JetQuery make_query(double t, const Points& x, JetOrder order);

struct FunctionalResult {
  double value = 0.0;
  std::vector<JetBatch> adjoints;  // one per query
};

using BatchFunctional = std::function<FunctionalResult(std::span<const JetBatch> jets)>;

struct LossGrad {
  double value = 0.0;
  std::vector<double> grad;
};

// Value of a scalar functional of batched jets and its exact parameter gradient.
// Throws NumericError naming the offending term when anything is non-finite.
// `describe_point(query, row)` labels a non-finite jet entry in the error message.
using PointLabeler = std::function<std::string(std::size_t query, Eigen::Index row)>;
LossGrad loss_and_param_grad(const ActionField& field, std::span<const JetQuery> queries,
                             const BatchFunctional& functional, const PointLabeler& describe_point = {});

// Checkpoint: JSON record with dims, widths, activation, seed and the flat parameters.
// Doubles are written in shortest round-trip form, so load(save(f)) is bitwise exact.
void save_field(const MlpField& field, const std::string& path);
std::shared_ptr<MlpField> load_field(const std::string& path);
std::string field_to_json(const MlpField& field);
std::shared_ptr<MlpField> field_from_json(const std::string& text);

}  // namespace actionmatch
