#pragma once

#include <memory>
#include <unordered_map>
#include <vector>

#include "metapriv/tensor.hpp"

namespace metapriv::ad {

// Define-by-run reverse-mode differentiation. Values are computed eagerly at
// node construction; backward() walks the graph and emits *new nodes* for the
// gradients, so a gradient can be differentiated again. That closure under
// differentiation is what the second-order meta-gradient, the
// Hessian-vector product, and the nested attack objectives rely on.
//
// ReLU and abs capture their activation masks at forward time; their second
// derivative is zero almost everywhere, which is exactly what the captured
// constant mask encodes.

enum class Op {
    Leaf,
    Add,
    Sub,
    Neg,
    Mul,
    Div,
    Scale,
    MulScalar,
    MatMul,
    Transpose,
    BroadcastRows,
    ColSum,
    BroadcastCols,
    RowSum,
    SumAll,
    Fill,
    Dot,
    Relu,
    Abs,
    Exp,
    Log,
    Sqrt,
    GatherCols,
    ScatterCols,
    ImgDx,
    ImgDxT,
    ImgDy,
    ImgDyT,
};

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    Op op = Op::Leaf;
    Tensor value;
    std::vector<NodePtr> inputs;
    Tensor aux;                   // relu/abs mask
    double aux_d = 0.0;           // scale factor
    int aux_i = 0;                // broadcast size / image height
    int aux_j = 0;                // image width
    std::vector<int> aux_shape;   // fill target shape
    std::vector<int> labels;      // gather/scatter column indices
    bool requires_grad = false;
};

NodePtr variable(Tensor v);   // differentiable leaf
NodePtr constant(Tensor v);   // non-differentiable leaf

NodePtr add(const NodePtr& a, const NodePtr& b);
NodePtr sub(const NodePtr& a, const NodePtr& b);
NodePtr neg(const NodePtr& a);
NodePtr mul(const NodePtr& a, const NodePtr& b);   // elementwise
NodePtr div(const NodePtr& a, const NodePtr& b);   // elementwise
NodePtr scale(const NodePtr& a, double c);
NodePtr mul_scalar(const NodePtr& t, const NodePtr& s);  // tensor * rank-0 node

NodePtr matmul(const NodePtr& a, const NodePtr& b);
NodePtr transpose(const NodePtr& a);

NodePtr broadcast_rows(const NodePtr& b, int m);  // [n] -> [m x n]
NodePtr col_sum(const NodePtr& a);                // [m x n] -> [n]
NodePtr broadcast_cols(const NodePtr& c, int n);  // [m] -> [m x n]
NodePtr row_sum(const NodePtr& a);                // [m x n] -> [m]
NodePtr sum_all(const NodePtr& a);                // -> rank-0
NodePtr fill(const NodePtr& s, std::vector<int> shape);
NodePtr dot(const NodePtr& a, const NodePtr& b);  // -> rank-0

NodePtr relu(const NodePtr& a);
NodePtr abs(const NodePtr& a);
NodePtr exp(const NodePtr& a);
NodePtr log(const NodePtr& a);
NodePtr sqrt(const NodePtr& a);

NodePtr gather_cols(const NodePtr& z, std::vector<int> labels);           // [m x n] -> [m]
NodePtr scatter_cols(const NodePtr& v, std::vector<int> labels, int n);   // [m] -> [m x n]

// Finite differences of adjacent pixels on a batch of flattened H x W images.
// ImgDx: [B, H*W] -> [B, H*(W-1)], ImgDy: [B, H*W] -> [B, (H-1)*W].
// The T variants are the adjoint linear maps.
NodePtr img_dx(const NodePtr& a, int h, int w);
NodePtr img_dx_t(const NodePtr& a, int h, int w);
NodePtr img_dy(const NodePtr& a, int h, int w);
NodePtr img_dy_t(const NodePtr& a, int h, int w);

using GradMap = std::unordered_map<const Node*, NodePtr>;

// Reverse-mode sweep from a one-element root. Returns gradient nodes for every
// node on a differentiable path from the root; look leaves up by pointer.
// The returned nodes are themselves part of the graph and can be swept again.
GradMap backward(const NodePtr& root);

// Gradient of `leaf` from a backward() result, or zeros of its shape if the
// root did not depend on it.
Tensor grad_value(const GradMap& grads, const NodePtr& leaf);

}  // namespace metapriv::ad
