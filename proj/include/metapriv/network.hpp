#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "metapriv/autodiff.hpp"
#include "metapriv/tensor.hpp"

namespace metapriv {

// Fully connected rectifier network: input -> hidden... -> class logits,
// biases on every layer, 64-bit reals throughout.
struct Architecture {
    int input_dim = 784;
    std::vector<int> hidden = {64};
    int num_classes = 3;

    void validate() const;  // throws std::invalid_argument
};

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

// Ordered, named parameter collection: w0 [in x h0], b0 [h0], ..., wk, bk.
struct ParamVector {
    std::vector<NamedTensor> params;

    bool same_schema(const ParamVector& o) const;
    std::int64_t size() const;
    std::vector<double> flatten() const;
    static ParamVector unflatten(const ParamVector& schema, const std::vector<double>& flat);
};

// Gradients share the parameter schema; one vector type serves both roles.
using GradientVector = ParamVector;

ParamVector init_params(const Architecture& arch, std::uint64_t seed);
ParamVector zeros_like(const ParamVector& p);
Architecture arch_of(const ParamVector& p);

// x + a*y with schema checking.
ParamVector axpy(const ParamVector& x, double a, const ParamVector& y);
double param_dot(const ParamVector& a, const ParamVector& b);
double param_norm(const ParamVector& a);

struct LabeledBatch {
    Tensor inputs;            // [B x input_dim]
    std::vector<int> labels;  // class ids in [0, num_classes)
};

// Logits for a batch; checks input width and label-free.
Tensor forward(const ParamVector& p, const Tensor& inputs);

Tensor softmax_rows(const Tensor& logits);

// Mean cross-entropy over the batch.
double ce_loss(const ParamVector& p, const LabeledBatch& batch);

GradientVector grad(const ParamVector& p, const LabeledBatch& batch);

// Hessian-vector product of the batch loss at p, computed by differentiating
// the directional derivative grad(p) . v; one extra sweep, no dense Hessian.
GradientVector hvp(const ParamVector& p, const LabeledBatch& batch, const GradientVector& v);

// Cosine similarity of two gradient vectors flattened end to end.
// Throws on zero norm.
double cosine_similarity(const GradientVector& a, const GradientVector& b);

// Graph builders, shared by the meta-learning engine and the attacks.
std::vector<ad::NodePtr> param_leaves(const ParamVector& p);     // differentiable
std::vector<ad::NodePtr> param_constants(const ParamVector& p);  // frozen
ad::NodePtr logits_graph(const std::vector<ad::NodePtr>& params, const ad::NodePtr& x);
ad::NodePtr ce_graph(const ad::NodePtr& logits, const std::vector<int>& labels);
std::vector<ad::NodePtr> grad_nodes(const ad::NodePtr& loss, const std::vector<ad::NodePtr>& wrt);
ad::NodePtr cosine_graph(const std::vector<ad::NodePtr>& a, const std::vector<ad::NodePtr>& b);
GradientVector grads_to_vector(const ParamVector& schema, const std::vector<ad::NodePtr>& gnodes);

struct Checkpoint {
    ParamVector params;
    int epoch = 0;
    std::int64_t step = 0;
};

// Versioned binary format, little-endian, 64-bit reals; round-trips bit-exactly.
void save_checkpoint(const std::string& path, const ParamVector& p, int epoch, std::int64_t step);
Checkpoint load_checkpoint(const std::string& path);

void validate_batch(const ParamVector& p, const LabeledBatch& batch);

}  // namespace metapriv
