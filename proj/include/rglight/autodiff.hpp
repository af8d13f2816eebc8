#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

namespace rglight::ad {

#ifdef RGLIGHT_FLOAT32
using Real = float;
#else
using Real = double;
#endif

using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Thrown by optimizers when a gradient holds NaN or Inf; parameters are left untouched.
class NonFiniteGradient : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;
    Matrix m;  // Adam first moment
    Matrix v;  // Adam second moment
};

/// Named parameters in insertion order, plus optimizer step count. References
/// returned by add() are invalidated by the next add().
class ParamStore {
  public:
    Parameter& add(const std::string& name, Matrix init);
    Parameter& get(const std::string& name);
    const Parameter& get(const std::string& name) const;
    bool has(const std::string& name) const { return index_.count(name) != 0; }

    std::vector<Parameter>& all() { return params_; }
    const std::vector<Parameter>& all() const { return params_; }
    std::size_t scalar_count() const;
    void zero_grad();
    /// Copies values (not gradients or optimizer state) from a store with identical layout.
    void copy_values_from(const ParamStore& other);

    long step = 0;

  private:
    std::vector<Parameter> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Row-compressed constant matrix for sparse-times-dense products.
struct Csr {
    int rows = 0;
    int cols = 0;
    std::vector<int> row_ptr{0};
    std::vector<int> col;
    std::vector<Real> val;
};

class Tape;

/// Handle to a value recorded on a Tape.
class Tensor {
  public:
    Tensor() = default;
    Tensor(Tape* tape, int id) : tape_(tape), id_(id) {}

    const Matrix& value() const;
    const Matrix& grad() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    Real item() const;
    bool requires_grad() const;
    Tape* tape() const { return tape_; }
    int id() const { return id_; }

  private:
    Tape* tape_ = nullptr;
    int id_ = -1;
};

/// Reverse-mode tape. Single-threaded; one backward pass per recording.
class Tape {
  public:
    using Backprop = std::function<void(Tape&, const Matrix& out_grad)>;

    Tensor constant(Matrix value);
    /// Leaf whose gradient can be read back after backward().
    Tensor variable(Matrix value);
    /// Leaf bound to a parameter; backward() adds into param.grad.
    Tensor param(Parameter& p);
    /// Parameter value as a constant (e.g. target networks).
    Tensor frozen(const Parameter& p) { return constant(p.value); }

    void backward(const Tensor& loss);
    void reset();
    std::size_t size() const { return nodes_.size(); }

    // Op plumbing.
    Tensor record(Matrix value, bool requires_grad, Backprop back);
    void accumulate(int id, const Matrix& g);
    const Matrix& value(int id) const { return nodes_[id].value; }
    const Matrix& grad(int id) const { return nodes_[id].grad; }
    bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        Backprop back;
        Parameter* param = nullptr;
    };
    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

// Differentiable operations. All operands must live on the same tape.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, Real s);
/// a (n x c) + row (1 x c) broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor cos(const Tensor& a);
/// Elementwise Huber: 0.5 x^2 for |x| <= lambda, lambda (|x| - 0.5 lambda) otherwise.
Tensor huber(const Tensor& a, Real lambda);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Row-wise softmax of a / temperature.
Tensor softmax_rows(const Tensor& a, Real temperature);
/// Constant sparse matrix times dense operand.
Tensor spmm(std::shared_ptr<const Csr> m, const Tensor& x);
Tensor gather_rows(const Tensor& a, std::vector<int> rows);
Tensor concat_rows(std::span<const Tensor> parts);
/// out[i] = a(i, cols[i]) as an n x 1 column.
Tensor pick(const Tensor& a, std::vector<int> cols);

/// Zeroes all gradients in `store`, then back-propagates `loss`.
void backward(Tape& tape, const Tensor& loss, ParamStore& store);

struct AdamConfig {
    Real lr = 1e-3;
    Real beta1 = 0.9;
    Real beta2 = 0.999;
    Real eps = 1e-8;
};

void sgd_step(ParamStore& store, Real lr);
void adam_step(ParamStore& store, const AdamConfig& cfg = {});

}  // namespace rglight::ad
