#include "metapriv/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>

namespace metapriv::ad {

namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a) {
    throw std::invalid_argument(std::string(op) + ": bad operand shape " + a.shape_str());
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

NodePtr make(Op op, Tensor value, std::vector<NodePtr> inputs) {
    auto n = std::make_shared<Node>();
    n->op = op;
    n->value = std::move(value);
    n->inputs = std::move(inputs);
    for (const auto& in : n->inputs)
        if (in->requires_grad) n->requires_grad = true;
    return n;
}

Tensor ew(const Tensor& a, const Tensor& b, double (*f)(double, double), const char* op) {
    if (!a.same_shape(b)) shape_error(op, a, b);
    Tensor out(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
    return out;
}

Tensor matmul_value(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) shape_error("matmul", a, b);
    const int m = a.rows(), k = a.cols(), n = b.cols();
    Tensor c({m, n});
    const double* ap = a.data().data();
    const double* bp = b.data().data();
    double* cp = c.data().data();
    for (int i = 0; i < m; ++i) {
        double* crow = cp + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = ap[static_cast<std::size_t>(i) * k + p];
            if (av == 0.0) continue;
            const double* brow = bp + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

}  // namespace

NodePtr variable(Tensor v) {
    auto n = make(Op::Leaf, std::move(v), {});
    n->requires_grad = true;
    return n;
}

NodePtr constant(Tensor v) { return make(Op::Leaf, std::move(v), {}); }

NodePtr add(const NodePtr& a, const NodePtr& b) {
    return make(Op::Add, ew(a->value, b->value, [](double x, double y) { return x + y; }, "add"), {a, b});
}

NodePtr sub(const NodePtr& a, const NodePtr& b) {
    return make(Op::Sub, ew(a->value, b->value, [](double x, double y) { return x - y; }, "sub"), {a, b});
}

NodePtr neg(const NodePtr& a) {
    Tensor out(a->value.shape());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = -a->value[i];
    return make(Op::Neg, std::move(out), {a});
}

NodePtr mul(const NodePtr& a, const NodePtr& b) {
    return make(Op::Mul, ew(a->value, b->value, [](double x, double y) { return x * y; }, "mul"), {a, b});
}

NodePtr div(const NodePtr& a, const NodePtr& b) {
    return make(Op::Div, ew(a->value, b->value, [](double x, double y) { return x / y; }, "div"), {a, b});
}

NodePtr scale(const NodePtr& a, double c) {
    Tensor out(a->value.shape());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = c * a->value[i];
    auto n = make(Op::Scale, std::move(out), {a});
    n->aux_d = c;
    return n;
}

NodePtr mul_scalar(const NodePtr& t, const NodePtr& s) {
    if (s->value.size() != 1) shape_error("mul_scalar", s->value);
    const double c = s->value[0];
    Tensor out(t->value.shape());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = c * t->value[i];
    return make(Op::MulScalar, std::move(out), {t, s});
}

NodePtr matmul(const NodePtr& a, const NodePtr& b) {
    return make(Op::MatMul, matmul_value(a->value, b->value), {a, b});
}

NodePtr transpose(const NodePtr& a) {
    const Tensor& v = a->value;
    if (v.rank() != 2) shape_error("transpose", v);
    Tensor out({v.cols(), v.rows()});
    for (int i = 0; i < v.rows(); ++i)
        for (int j = 0; j < v.cols(); ++j) out.at(j, i) = v.at(i, j);
    return make(Op::Transpose, std::move(out), {a});
}

NodePtr broadcast_rows(const NodePtr& b, int m) {
    const Tensor& v = b->value;
    if (v.rank() != 1 || m <= 0) shape_error("broadcast_rows", v);
    const int n = v.shape()[0];
    Tensor out({m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) = v[j];
    auto node = make(Op::BroadcastRows, std::move(out), {b});
    node->aux_i = m;
    return node;
}

NodePtr col_sum(const NodePtr& a) {
    const Tensor& v = a->value;
    if (v.rank() != 2) shape_error("col_sum", v);
    Tensor out({v.cols()});
    for (int i = 0; i < v.rows(); ++i)
        for (int j = 0; j < v.cols(); ++j) out[j] += v.at(i, j);
    return make(Op::ColSum, std::move(out), {a});
}

NodePtr broadcast_cols(const NodePtr& c, int n) {
    const Tensor& v = c->value;
    if (v.rank() != 1 || n <= 0) shape_error("broadcast_cols", v);
    const int m = v.shape()[0];
    Tensor out({m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) = v[i];
    auto node = make(Op::BroadcastCols, std::move(out), {c});
    node->aux_i = n;
    return node;
}

NodePtr row_sum(const NodePtr& a) {
    const Tensor& v = a->value;
    if (v.rank() != 2) shape_error("row_sum", v);
    Tensor out({v.rows()});
    for (int i = 0; i < v.rows(); ++i) {
        double s = 0.0;
        for (int j = 0; j < v.cols(); ++j) s += v.at(i, j);
        out[i] = s;
    }
    return make(Op::RowSum, std::move(out), {a});
}

NodePtr sum_all(const NodePtr& a) {
    double s = 0.0;
    for (std::int64_t i = 0; i < a->value.size(); ++i) s += a->value[i];
    return make(Op::SumAll, Tensor::scalar(s), {a});
}

NodePtr fill(const NodePtr& s, std::vector<int> shape) {
    if (s->value.size() != 1) shape_error("fill", s->value);
    auto n = make(Op::Fill, Tensor::full(shape, s->value[0]), {s});
    n->aux_shape = std::move(shape);
    return n;
}

NodePtr dot(const NodePtr& a, const NodePtr& b) {
    if (!a->value.same_shape(b->value)) shape_error("dot", a->value, b->value);
    double s = 0.0;
    for (std::int64_t i = 0; i < a->value.size(); ++i) s += a->value[i] * b->value[i];
    return make(Op::Dot, Tensor::scalar(s), {a, b});
}

NodePtr relu(const NodePtr& a) {
    Tensor out(a->value.shape());
    Tensor mask(a->value.shape());
    for (std::int64_t i = 0; i < out.size(); ++i) {
        const bool on = a->value[i] > 0.0;
        out[i] = on ? a->value[i] : 0.0;
        mask[i] = on ? 1.0 : 0.0;
    }
    auto n = make(Op::Relu, std::move(out), {a});
    n->aux = std::move(mask);
    return n;
}

NodePtr abs(const NodePtr& a) {
    Tensor out(a->value.shape());
    Tensor sign(a->value.shape());
    for (std::int64_t i = 0; i < out.size(); ++i) {
        const double v = a->value[i];
        out[i] = std::fabs(v);
        sign[i] = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
    }
    auto n = make(Op::Abs, std::move(out), {a});
    n->aux = std::move(sign);
    return n;
}

NodePtr exp(const NodePtr& a) {
    Tensor out(a->value.shape());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::exp(a->value[i]);
    return make(Op::Exp, std::move(out), {a});
}

NodePtr log(const NodePtr& a) {
    Tensor out(a->value.shape());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::log(a->value[i]);
    return make(Op::Log, std::move(out), {a});
}

NodePtr sqrt(const NodePtr& a) {
    Tensor out(a->value.shape());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(a->value[i]);
    return make(Op::Sqrt, std::move(out), {a});
}

NodePtr gather_cols(const NodePtr& z, std::vector<int> labels) {
    const Tensor& v = z->value;
    if (v.rank() != 2 || static_cast<int>(labels.size()) != v.rows()) shape_error("gather_cols", v);
    Tensor out({v.rows()});
    for (int i = 0; i < v.rows(); ++i) {
        const int c = labels[static_cast<std::size_t>(i)];
        if (c < 0 || c >= v.cols()) throw std::invalid_argument("gather_cols: label out of range");
        out[i] = v.at(i, c);
    }
    auto n = make(Op::GatherCols, std::move(out), {z});
    n->labels = std::move(labels);
    return n;
}

NodePtr scatter_cols(const NodePtr& v, std::vector<int> labels, int ncols) {
    const Tensor& x = v->value;
    if (x.rank() != 1 || static_cast<int>(labels.size()) != x.shape()[0]) shape_error("scatter_cols", x);
    const int m = x.shape()[0];
    Tensor out({m, ncols});
    for (int i = 0; i < m; ++i) {
        const int c = labels[static_cast<std::size_t>(i)];
        if (c < 0 || c >= ncols) throw std::invalid_argument("scatter_cols: label out of range");
        out.at(i, c) = x[i];
    }
    auto n = make(Op::ScatterCols, std::move(out), {v});
    n->labels = std::move(labels);
    n->aux_i = ncols;
    return n;
}

namespace {

NodePtr img_op(Op op, const NodePtr& a, int h, int w) {
    const Tensor& v = a->value;
    const bool fwd = op == Op::ImgDx || op == Op::ImgDy;
    const bool horiz = op == Op::ImgDx || op == Op::ImgDxT;
    const std::int64_t full = static_cast<std::int64_t>(h) * w;
    const std::int64_t small = horiz ? static_cast<std::int64_t>(h) * (w - 1) : static_cast<std::int64_t>(h - 1) * w;
    if (v.rank() != 2 || h < 2 || w < 2) shape_error("img_diff", v);
    const std::int64_t want = fwd ? full : small;
    if (v.cols() != want) shape_error("img_diff", v);
    const int b = v.rows();
    Tensor out({b, static_cast<int>(fwd ? small : full)});
    for (int img = 0; img < b; ++img) {
        const double* in = v.data().data() + static_cast<std::size_t>(img) * v.cols();
        double* o = out.data().data() + static_cast<std::size_t>(img) * out.cols();
        if (op == Op::ImgDx) {
            for (int r = 0; r < h; ++r)
                for (int c = 0; c + 1 < w; ++c) o[r * (w - 1) + c] = in[r * w + c + 1] - in[r * w + c];
        } else if (op == Op::ImgDxT) {
            for (int r = 0; r < h; ++r)
                for (int c = 0; c + 1 < w; ++c) {
                    const double g = in[r * (w - 1) + c];
                    o[r * w + c + 1] += g;
                    o[r * w + c] -= g;
                }
        } else if (op == Op::ImgDy) {
            for (int r = 0; r + 1 < h; ++r)
                for (int c = 0; c < w; ++c) o[r * w + c] = in[(r + 1) * w + c] - in[r * w + c];
        } else {
            for (int r = 0; r + 1 < h; ++r)
                for (int c = 0; c < w; ++c) {
                    const double g = in[r * w + c];
                    o[(r + 1) * w + c] += g;
                    o[r * w + c] -= g;
                }
        }
    }
    auto n = make(op, std::move(out), {a});
    n->aux_i = h;
    n->aux_j = w;
    return n;
}

}  // namespace

NodePtr img_dx(const NodePtr& a, int h, int w) { return img_op(Op::ImgDx, a, h, w); }
NodePtr img_dx_t(const NodePtr& a, int h, int w) { return img_op(Op::ImgDxT, a, h, w); }
NodePtr img_dy(const NodePtr& a, int h, int w) { return img_op(Op::ImgDy, a, h, w); }
NodePtr img_dy_t(const NodePtr& a, int h, int w) { return img_op(Op::ImgDyT, a, h, w); }

namespace {

// Gradient contributions of `n`'s output gradient `g` to each of n->inputs.
// Entries for inputs with requires_grad == false are left null.
std::vector<NodePtr> vjp(const NodePtr& n, const NodePtr& g) {
    const auto& in = n->inputs;
    auto want = [&](std::size_t i) { return in[i]->requires_grad; };
    switch (n->op) {
        case Op::Leaf:
            return {};
        case Op::Add:
            return {want(0) ? g : nullptr, want(1) ? g : nullptr};
        case Op::Sub:
            return {want(0) ? g : nullptr, want(1) ? neg(g) : nullptr};
        case Op::Neg:
            return {neg(g)};
        case Op::Mul:
            return {want(0) ? mul(g, in[1]) : nullptr, want(1) ? mul(g, in[0]) : nullptr};
        case Op::Div:
            return {want(0) ? div(g, in[1]) : nullptr, want(1) ? neg(mul(g, div(n, in[1]))) : nullptr};
        case Op::Scale:
            return {scale(g, n->aux_d)};
        case Op::MulScalar:
            return {want(0) ? mul_scalar(g, in[1]) : nullptr, want(1) ? dot(g, in[0]) : nullptr};
        case Op::MatMul:
            return {want(0) ? matmul(g, transpose(in[1])) : nullptr, want(1) ? matmul(transpose(in[0]), g) : nullptr};
        case Op::Transpose:
            return {transpose(g)};
        case Op::BroadcastRows:
            return {col_sum(g)};
        case Op::ColSum:
            return {broadcast_rows(g, in[0]->value.rows())};
        case Op::BroadcastCols:
            return {row_sum(g)};
        case Op::RowSum:
            return {broadcast_cols(g, in[0]->value.cols())};
        case Op::SumAll:
            return {fill(g, in[0]->value.shape())};
        case Op::Fill:
            return {sum_all(g)};
        case Op::Dot:
            return {want(0) ? mul_scalar(in[1], g) : nullptr, want(1) ? mul_scalar(in[0], g) : nullptr};
        case Op::Relu:
        case Op::Abs:
            return {mul(g, constant(n->aux))};
        case Op::Exp:
            return {mul(g, n)};
        case Op::Log:
            return {div(g, in[0])};
        case Op::Sqrt:
            return {div(scale(g, 0.5), n)};
        case Op::GatherCols:
            return {scatter_cols(g, n->labels, in[0]->value.cols())};
        case Op::ScatterCols:
            return {gather_cols(g, n->labels)};
        case Op::ImgDx:
            return {img_dx_t(g, n->aux_i, n->aux_j)};
        case Op::ImgDxT:
            return {img_dx(g, n->aux_i, n->aux_j)};
        case Op::ImgDy:
            return {img_dy_t(g, n->aux_i, n->aux_j)};
        case Op::ImgDyT:
            return {img_dy(g, n->aux_i, n->aux_j)};
    }
    throw std::logic_error("vjp: unhandled op");
}

}  // namespace

GradMap backward(const NodePtr& root) {
    if (root->value.size() != 1) throw std::invalid_argument("backward: root must have exactly one element");
    if (!root->requires_grad) return {};

    // Iterative post-order over the differentiable subgraph; the input DAG is
    // acyclic by construction, so marking nodes when pushed is safe.
    std::vector<NodePtr> order;
    std::unordered_set<const Node*> seen;
    std::vector<std::pair<NodePtr, std::size_t>> stack;
    stack.emplace_back(root, 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& top = stack.back();
        if (top.second < top.first->inputs.size()) {
            NodePtr child = top.first->inputs[top.second++];
            if (child->requires_grad && !seen.count(child.get())) {
                seen.insert(child.get());
                stack.emplace_back(std::move(child), 0);
            }
        } else {
            order.push_back(top.first);
            stack.pop_back();
        }
    }

    GradMap grads;
    grads[root.get()] = constant(Tensor::full(root->value.shape(), 1.0));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const NodePtr& node = *it;
        auto gIt = grads.find(node.get());
        if (gIt == grads.end()) continue;
        const NodePtr g = gIt->second;
        if (node->op == Op::Leaf) continue;
        auto contribs = vjp(node, g);
        for (std::size_t i = 0; i < contribs.size(); ++i) {
            if (!contribs[i]) continue;
            const Node* key = node->inputs[i].get();
            auto [slot, fresh] = grads.emplace(key, contribs[i]);
            if (!fresh) slot->second = add(slot->second, contribs[i]);
        }
    }
    return grads;
}

Tensor grad_value(const GradMap& grads, const NodePtr& leaf) {
    auto it = grads.find(leaf.get());
    if (it == grads.end()) return Tensor::zeros(leaf->value.shape());
    return it->second->value;
}

}  // namespace metapriv::ad
