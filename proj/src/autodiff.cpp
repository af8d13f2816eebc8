#include "rglight/autodiff.hpp"

#include <cmath>
#include <string>

namespace rglight::ad {

namespace {

void check_same_tape(const Tensor& a, const Tensor& b) {
    if (a.tape() == nullptr || a.tape() != b.tape()) {
        throw std::invalid_argument("autodiff: operands recorded on different tapes");
    }
}

void check_shape(bool ok, const char* op, const Tensor& a, const Tensor& b) {
    if (!ok) {
        throw std::invalid_argument(std::string("autodiff: shape mismatch in ") + op + ": " +
                                    std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
                                    std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    }
}

}  // namespace

Parameter& ParamStore::add(const std::string& name, Matrix init) {
    if (has(name)) throw std::invalid_argument("ParamStore: duplicate parameter " + name);
    Parameter p;
    p.name = name;
    p.grad = Matrix::Zero(init.rows(), init.cols());
    p.m = Matrix::Zero(init.rows(), init.cols());
    p.v = Matrix::Zero(init.rows(), init.cols());
    p.value = std::move(init);
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return params_.back();
}

Parameter& ParamStore::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("ParamStore: no parameter " + name);
    return params_[it->second];
}

const Parameter& ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("ParamStore: no parameter " + name);
    return params_[it->second];
}

std::size_t ParamStore::scalar_count() const {
    std::size_t n = 0;
    for (const Parameter& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
}

void ParamStore::zero_grad() {
    for (Parameter& p : params_) p.grad.setZero();
}

void ParamStore::copy_values_from(const ParamStore& other) {
    if (other.params_.size() != params_.size()) throw std::invalid_argument("ParamStore: layout mismatch");
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (params_[i].name != other.params_[i].name ||
            params_[i].value.rows() != other.params_[i].value.rows() ||
            params_[i].value.cols() != other.params_[i].value.cols()) {
            throw std::invalid_argument("ParamStore: layout mismatch at " + params_[i].name);
        }
        params_[i].value = other.params_[i].value;
    }
}

const Matrix& Tensor::value() const { return tape_->value(id_); }
const Matrix& Tensor::grad() const { return tape_->grad(id_); }
bool Tensor::requires_grad() const { return tape_->requires_grad(id_); }

Real Tensor::item() const {
    const Matrix& v = value();
    if (v.size() != 1) throw std::invalid_argument("Tensor::item on a non-scalar");
    return v(0, 0);
}

Tensor Tape::record(Matrix value, bool requires_grad, Backprop back) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
}

Tensor Tape::constant(Matrix value) { return record(std::move(value), false, {}); }

Tensor Tape::variable(Matrix value) { return record(std::move(value), true, {}); }

Tensor Tape::param(Parameter& p) {
    Tensor t = record(p.value, true, {});
    nodes_.back().param = &p;
    return t;
}

void Tape::accumulate(int id, const Matrix& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
        n.grad = g;
    } else {
        n.grad += g;
    }
}

void Tape::backward(const Tensor& loss) {
    if (backward_done_) throw std::logic_error("Tape::backward called twice without reset");
    if (loss.tape() != this) throw std::invalid_argument("Tape::backward: loss from another tape");
    if (loss.value().size() != 1) throw std::invalid_argument("Tape::backward: loss must be a scalar");
    backward_done_ = true;
    if (!nodes_[loss.id()].requires_grad) return;
    nodes_[loss.id()].grad = Matrix::Ones(1, 1);
    for (int i = loss.id(); i >= 0; --i) {
        Node& n = nodes_[i];
        if (!n.requires_grad || n.grad.size() == 0) continue;
        if (n.back) {
            // Copy: the closure may grow other nodes' gradients but never this one.
            const Matrix g = n.grad;
            n.back(*this, g);
        }
        if (n.param != nullptr) n.param->grad += n.grad;
    }
}

void Tape::reset() {
    nodes_.clear();
    backward_done_ = false;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_same_tape(a, b);
    check_shape(a.cols() == b.rows(), "matmul", a, b);
    Tape& t = *a.tape();
    Matrix out(a.rows(), b.cols());
    out.noalias() = a.value() * b.value();
    const int ia = a.id(), ib = b.id();
    return t.record(std::move(out), a.requires_grad() || b.requires_grad(),
                    [ia, ib](Tape& tp, const Matrix& g) {
                        if (tp.requires_grad(ia)) tp.accumulate(ia, g * tp.value(ib).transpose());
                        if (tp.requires_grad(ib)) tp.accumulate(ib, tp.value(ia).transpose() * g);
                    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_tape(a, b);
    check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add", a, b);
    const int ia = a.id(), ib = b.id();
    return a.tape()->record(a.value() + b.value(), a.requires_grad() || b.requires_grad(),
                            [ia, ib](Tape& tp, const Matrix& g) {
                                tp.accumulate(ia, g);
                                tp.accumulate(ib, g);
                            });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_tape(a, b);
    check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "sub", a, b);
    const int ia = a.id(), ib = b.id();
    return a.tape()->record(a.value() - b.value(), a.requires_grad() || b.requires_grad(),
                            [ia, ib](Tape& tp, const Matrix& g) {
                                tp.accumulate(ia, g);
                                if (tp.requires_grad(ib)) tp.accumulate(ib, -g);
                            });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_tape(a, b);
    check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "mul", a, b);
    const int ia = a.id(), ib = b.id();
    return a.tape()->record(a.value().cwiseProduct(b.value()), a.requires_grad() || b.requires_grad(),
                            [ia, ib](Tape& tp, const Matrix& g) {
                                if (tp.requires_grad(ia)) tp.accumulate(ia, g.cwiseProduct(tp.value(ib)));
                                if (tp.requires_grad(ib)) tp.accumulate(ib, g.cwiseProduct(tp.value(ia)));
                            });
}

Tensor scale(const Tensor& a, Real s) {
    const int ia = a.id();
    return a.tape()->record(a.value() * s, a.requires_grad(),
                            [ia, s](Tape& tp, const Matrix& g) { tp.accumulate(ia, g * s); });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
    check_same_tape(a, row);
    check_shape(row.rows() == 1 && row.cols() == a.cols(), "add_row", a, row);
    Matrix out = a.value();
    out.rowwise() += row.value().row(0);
    const int ia = a.id(), ir = row.id();
    return a.tape()->record(std::move(out), a.requires_grad() || row.requires_grad(),
                            [ia, ir](Tape& tp, const Matrix& g) {
                                tp.accumulate(ia, g);
                                if (tp.requires_grad(ir)) tp.accumulate(ir, g.colwise().sum());
                            });
}

Tensor sigmoid(const Tensor& a) {
    Matrix out = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
    Tape& t = *a.tape();
    const int ia = a.id();
    const int self = static_cast<int>(t.size());
    return t.record(std::move(out), a.requires_grad(), [ia, self](Tape& tp, const Matrix& g) {
        const auto& y = tp.value(self).array();
        tp.accumulate(ia, (g.array() * y * (1.0 - y)).matrix());
    });
}

Tensor relu(const Tensor& a) {
    const int ia = a.id();
    return a.tape()->record(a.value().cwiseMax(Real(0)), a.requires_grad(),
                            [ia](Tape& tp, const Matrix& g) {
                                tp.accumulate(ia, (tp.value(ia).array() > 0).select(g, Real(0)).matrix());
                            });
}

Tensor cos(const Tensor& a) {
    const int ia = a.id();
    return a.tape()->record(a.value().array().cos().matrix(), a.requires_grad(),
                            [ia](Tape& tp, const Matrix& g) {
                                tp.accumulate(ia, (-g.array() * tp.value(ia).array().sin()).matrix());
                            });
}

Tensor huber(const Tensor& a, Real lambda) {
    if (!(lambda > 0)) throw std::invalid_argument("huber: lambda must be > 0");
    const auto x = a.value().array();
    Matrix out = (x.abs() <= lambda).select(0.5 * x.square(), lambda * (x.abs() - 0.5 * lambda)).matrix();
    const int ia = a.id();
    return a.tape()->record(std::move(out), a.requires_grad(), [ia, lambda](Tape& tp, const Matrix& g) {
        const auto x = tp.value(ia).array();
        tp.accumulate(ia, (g.array() * x.max(-lambda).min(lambda)).matrix());
    });
}

Tensor sum(const Tensor& a) {
    Matrix out(1, 1);
    out(0, 0) = a.value().sum();
    const int ia = a.id();
    const auto r = a.rows(), c = a.cols();
    return a.tape()->record(std::move(out), a.requires_grad(), [ia, r, c](Tape& tp, const Matrix& g) {
        tp.accumulate(ia, Matrix::Constant(r, c, g(0, 0)));
    });
}

Tensor mean(const Tensor& a) {
    if (a.value().size() == 0) throw std::invalid_argument("mean of an empty tensor");
    return scale(sum(a), Real(1) / static_cast<Real>(a.value().size()));
}

Tensor softmax_rows(const Tensor& a, Real temperature) {
    if (!(temperature > 0)) throw std::invalid_argument("softmax_rows: temperature must be > 0");
    Matrix z = a.value() / temperature;
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        const Real m = z.row(i).maxCoeff();
        z.row(i) = (z.row(i).array() - m).exp().matrix();
        z.row(i) /= z.row(i).sum();
    }
    Tape& t = *a.tape();
    const int ia = a.id();
    const int self = static_cast<int>(t.size());
    return t.record(std::move(z), a.requires_grad(), [ia, self, temperature](Tape& tp, const Matrix& g) {
        const Matrix& y = tp.value(self);
        Matrix dx(y.rows(), y.cols());
        for (Eigen::Index i = 0; i < y.rows(); ++i) {
            const Real dot = g.row(i).dot(y.row(i));
            dx.row(i) = (y.row(i).array() * (g.row(i).array() - dot)).matrix() / temperature;
        }
        tp.accumulate(ia, dx);
    });
}

Tensor spmm(std::shared_ptr<const Csr> m, const Tensor& x) {
    if (m->cols != x.rows()) {
        throw std::invalid_argument("spmm: sparse matrix has " + std::to_string(m->cols) +
                                    " columns, operand has " + std::to_string(x.rows()) + " rows");
    }
    const Matrix& xv = x.value();
    Matrix out = Matrix::Zero(m->rows, xv.cols());
    for (int i = 0; i < m->rows; ++i) {
        for (int k = m->row_ptr[i]; k < m->row_ptr[i + 1]; ++k) {
            out.row(i) += m->val[k] * xv.row(m->col[k]);
        }
    }
    const int ix = x.id();
    return x.tape()->record(std::move(out), x.requires_grad(), [ix, m](Tape& tp, const Matrix& g) {
        Matrix dx = Matrix::Zero(m->cols, g.cols());
        for (int i = 0; i < m->rows; ++i) {
            for (int k = m->row_ptr[i]; k < m->row_ptr[i + 1]; ++k) {
                dx.row(m->col[k]) += m->val[k] * g.row(i);
            }
        }
        tp.accumulate(ix, dx);
    });
}

Tensor gather_rows(const Tensor& a, std::vector<int> rows) {
    const Matrix& av = a.value();
    Matrix out(static_cast<Eigen::Index>(rows.size()), av.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= av.rows()) throw std::out_of_range("gather_rows: row index out of range");
        out.row(static_cast<Eigen::Index>(i)) = av.row(rows[i]);
    }
    const int ia = a.id();
    const auto n = av.rows();
    return a.tape()->record(std::move(out), a.requires_grad(),
                            [ia, n, rows = std::move(rows)](Tape& tp, const Matrix& g) {
                                Matrix da = Matrix::Zero(n, g.cols());
                                for (std::size_t i = 0; i < rows.size(); ++i) {
                                    da.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
                                }
                                tp.accumulate(ia, da);
                            });
}

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no operands");
    Tape& t = *parts[0].tape();
    Eigen::Index rows = 0;
    const Eigen::Index cols = parts[0].cols();
    bool needs = false;
    std::vector<int> ids;
    std::vector<Eigen::Index> offsets;
    for (const Tensor& p : parts) {
        check_same_tape(parts[0], p);
        check_shape(p.cols() == cols, "concat_rows", parts[0], p);
        offsets.push_back(rows);
        rows += p.rows();
        needs = needs || p.requires_grad();
        ids.push_back(p.id());
    }
    Matrix out(rows, cols);
    for (std::size_t i = 0; i < parts.size(); ++i) {
        out.middleRows(offsets[i], parts[i].rows()) = parts[i].value();
    }
    return t.record(std::move(out), needs, [ids, offsets](Tape& tp, const Matrix& g) {
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (!tp.requires_grad(ids[i])) continue;
            tp.accumulate(ids[i], g.middleRows(offsets[i], tp.value(ids[i]).rows()));
        }
    });
}

Tensor pick(const Tensor& a, std::vector<int> cols) {
    const Matrix& av = a.value();
    if (static_cast<Eigen::Index>(cols.size()) != av.rows()) {
        throw std::invalid_argument("pick: need one column index per row");
    }
    Matrix out(av.rows(), 1);
    for (Eigen::Index i = 0; i < av.rows(); ++i) {
        if (cols[i] < 0 || cols[i] >= av.cols()) throw std::out_of_range("pick: column index out of range");
        out(i, 0) = av(i, cols[i]);
    }
    const int ia = a.id();
    const auto c = av.cols();
    return a.tape()->record(std::move(out), a.requires_grad(),
                            [ia, c, cols = std::move(cols)](Tape& tp, const Matrix& g) {
                                Matrix da = Matrix::Zero(g.rows(), c);
                                for (Eigen::Index i = 0; i < g.rows(); ++i) da(i, cols[i]) = g(i, 0);
                                tp.accumulate(ia, da);
                            });
}

void backward(Tape& tape, const Tensor& loss, ParamStore& store) {
    store.zero_grad();
    tape.backward(loss);
}

namespace {

void check_finite(const ParamStore& store) {
    for (const Parameter& p : store.all()) {
        if (!p.grad.allFinite()) throw NonFiniteGradient("non-finite gradient in parameter " + p.name);
    }
}

}  // namespace

void sgd_step(ParamStore& store, Real lr) {
    check_finite(store);
    for (Parameter& p : store.all()) p.value -= lr * p.grad;
    ++store.step;
}

void adam_step(ParamStore& store, const AdamConfig& cfg) {
    check_finite(store);
    ++store.step;
    const Real t = static_cast<Real>(store.step);
    const Real c1 = 1 - std::pow(cfg.beta1, t);
    const Real c2 = 1 - std::pow(cfg.beta2, t);
    for (Parameter& p : store.all()) {
        p.m = cfg.beta1 * p.m + (1 - cfg.beta1) * p.grad;
        p.v = cfg.beta2 * p.v + (1 - cfg.beta2) * p.grad.cwiseProduct(p.grad);
        p.value.array() -= cfg.lr * (p.m.array() / c1) / ((p.v.array() / c2).sqrt() + cfg.eps);
    }
}

}  // namespace rglight::ad
