#include "metapriv/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "metapriv/rng.hpp"

namespace metapriv {

void Architecture::validate() const {
    if (input_dim <= 0) throw std::invalid_argument("architecture: input_dim must be positive");
    if (num_classes < 2) throw std::invalid_argument("architecture: need at least two classes");
    if (hidden.empty()) throw std::invalid_argument("architecture: need at least one hidden layer");
    for (int h : hidden)
        if (h <= 0) throw std::invalid_argument("architecture: hidden widths must be positive");
}

bool ParamVector::same_schema(const ParamVector& o) const {
    if (params.size() != o.params.size()) return false;
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].name != o.params[i].name) return false;
        if (params[i].tensor.shape() != o.params[i].tensor.shape()) return false;
    }
    return true;
}

std::int64_t ParamVector::size() const {
    std::int64_t n = 0;
    for (const auto& p : params) n += p.tensor.size();
    return n;
}

std::vector<double> ParamVector::flatten() const {
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(size()));
    for (const auto& p : params) flat.insert(flat.end(), p.tensor.data().begin(), p.tensor.data().end());
    return flat;
}

ParamVector ParamVector::unflatten(const ParamVector& schema, const std::vector<double>& flat) {
    if (static_cast<std::int64_t>(flat.size()) != schema.size())
        throw std::invalid_argument("unflatten: length does not match schema");
    ParamVector out;
    std::size_t pos = 0;
    for (const auto& p : schema.params) {
        const auto n = static_cast<std::size_t>(p.tensor.size());
        Tensor t(p.tensor.shape(), std::vector<double>(flat.begin() + pos, flat.begin() + pos + n));
        out.params.push_back({p.name, std::move(t)});
        pos += n;
    }
    return out;
}

ParamVector init_params(const Architecture& arch, std::uint64_t seed) {
    arch.validate();
    std::vector<int> widths;
    widths.push_back(arch.input_dim);
    for (int h : arch.hidden) widths.push_back(h);
    widths.push_back(arch.num_classes);

    ParamVector p;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const int in = widths[l], out = widths[l + 1];
        Rng rng(derive_seed(seed, l));
        Tensor w({in, out});
        const double sd = std::sqrt(2.0 / in);
        for (std::int64_t i = 0; i < w.size(); ++i) w[i] = rng.normal(0.0, sd);
        p.params.push_back({"w" + std::to_string(l), std::move(w)});
        p.params.push_back({"b" + std::to_string(l), Tensor::zeros({out})});
    }
    return p;
}

ParamVector zeros_like(const ParamVector& p) {
    ParamVector out;
    for (const auto& e : p.params) out.params.push_back({e.name, Tensor::zeros(e.tensor.shape())});
    return out;
}

Architecture arch_of(const ParamVector& p) {
    if (p.params.size() < 4 || p.params.size() % 2 != 0)
        throw std::invalid_argument("parameter vector does not describe a layered network");
    Architecture arch;
    arch.hidden.clear();
    const std::size_t layers = p.params.size() / 2;
    for (std::size_t l = 0; l < layers; ++l) {
        const auto& w = p.params[2 * l].tensor;
        const auto& b = p.params[2 * l + 1].tensor;
        if (w.rank() != 2 || b.rank() != 1 || b.shape()[0] != w.cols())
            throw std::invalid_argument("parameter vector has inconsistent layer shapes");
        if (l == 0) arch.input_dim = w.rows();
        if (l + 1 < layers)
            arch.hidden.push_back(w.cols());
        else
            arch.num_classes = w.cols();
    }
    arch.validate();
    return arch;
}

ParamVector axpy(const ParamVector& x, double a, const ParamVector& y) {
    if (!x.same_schema(y)) throw std::invalid_argument("parameter schema mismatch");
    ParamVector out;
    for (std::size_t i = 0; i < x.params.size(); ++i) {
        Tensor t(x.params[i].tensor.shape());
        const auto& xv = x.params[i].tensor;
        const auto& yv = y.params[i].tensor;
        for (std::int64_t j = 0; j < t.size(); ++j) t[j] = xv[j] + a * yv[j];
        out.params.push_back({x.params[i].name, std::move(t)});
    }
    return out;
}

double param_dot(const ParamVector& a, const ParamVector& b) {
    if (!a.same_schema(b)) throw std::invalid_argument("parameter schema mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.params.size(); ++i) {
        const auto& av = a.params[i].tensor;
        const auto& bv = b.params[i].tensor;
        for (std::int64_t j = 0; j < av.size(); ++j) s += av[j] * bv[j];
    }
    return s;
}

double param_norm(const ParamVector& a) { return std::sqrt(param_dot(a, a)); }

void validate_batch(const ParamVector& p, const LabeledBatch& batch) {
    const Architecture arch = arch_of(p);
    if (batch.inputs.rank() != 2 || batch.inputs.cols() != arch.input_dim)
        throw std::invalid_argument("batch input shape " + batch.inputs.shape_str() + " does not match input_dim " +
                                    std::to_string(arch.input_dim));
    if (batch.inputs.rows() == 0) throw std::invalid_argument("empty batch");
    if (static_cast<int>(batch.labels.size()) != batch.inputs.rows())
        throw std::invalid_argument("batch label count does not match batch size");
    for (int y : batch.labels)
        if (y < 0 || y >= arch.num_classes) throw std::invalid_argument("batch label out of range");
}

std::vector<ad::NodePtr> param_leaves(const ParamVector& p) {
    std::vector<ad::NodePtr> nodes;
    nodes.reserve(p.params.size());
    for (const auto& e : p.params) nodes.push_back(ad::variable(e.tensor));
    return nodes;
}

std::vector<ad::NodePtr> param_constants(const ParamVector& p) {
    std::vector<ad::NodePtr> nodes;
    nodes.reserve(p.params.size());
    for (const auto& e : p.params) nodes.push_back(ad::constant(e.tensor));
    return nodes;
}

ad::NodePtr logits_graph(const std::vector<ad::NodePtr>& params, const ad::NodePtr& x) {
    if (params.size() < 4 || params.size() % 2 != 0)
        throw std::invalid_argument("logits_graph: malformed parameter list");
    ad::NodePtr h = x;
    const std::size_t layers = params.size() / 2;
    for (std::size_t l = 0; l < layers; ++l) {
        const int b = h->value.rows();
        ad::NodePtr z = ad::add(ad::matmul(h, params[2 * l]), ad::broadcast_rows(params[2 * l + 1], b));
        h = (l + 1 < layers) ? ad::relu(z) : z;
    }
    return h;
}

ad::NodePtr ce_graph(const ad::NodePtr& logits, const std::vector<int>& labels) {
    const Tensor& z = logits->value;
    if (z.rank() != 2 || static_cast<int>(labels.size()) != z.rows())
        throw std::invalid_argument("ce_graph: logits/labels mismatch");
    const int m = z.rows();
    Tensor rowmax({m});
    for (int i = 0; i < m; ++i) {
        double mx = z.at(i, 0);
        for (int j = 1; j < z.cols(); ++j) mx = std::max(mx, z.at(i, j));
        rowmax[i] = mx;
    }
    auto mx = ad::constant(rowmax);
    auto shifted = ad::sub(logits, ad::broadcast_cols(mx, z.cols()));
    auto lse = ad::add(ad::log(ad::row_sum(ad::exp(shifted))), mx);
    auto picked = ad::gather_cols(logits, labels);
    return ad::scale(ad::sum_all(ad::sub(lse, picked)), 1.0 / m);
}

std::vector<ad::NodePtr> grad_nodes(const ad::NodePtr& loss, const std::vector<ad::NodePtr>& wrt) {
    auto grads = ad::backward(loss);
    std::vector<ad::NodePtr> out;
    out.reserve(wrt.size());
    for (const auto& leaf : wrt) {
        auto it = grads.find(leaf.get());
        out.push_back(it != grads.end() ? it->second : ad::constant(Tensor::zeros(leaf->value.shape())));
    }
    return out;
}

ad::NodePtr cosine_graph(const std::vector<ad::NodePtr>& a, const std::vector<ad::NodePtr>& b) {
    if (a.size() != b.size() || a.empty()) throw std::invalid_argument("cosine_graph: slot count mismatch");
    ad::NodePtr num, na, nb;
    for (std::size_t i = 0; i < a.size(); ++i) {
        auto d = ad::dot(a[i], b[i]);
        auto da = ad::dot(a[i], a[i]);
        auto db = ad::dot(b[i], b[i]);
        num = num ? ad::add(num, d) : d;
        na = na ? ad::add(na, da) : da;
        nb = nb ? ad::add(nb, db) : db;
    }
    return ad::div(num, ad::mul(ad::sqrt(na), ad::sqrt(nb)));
}

GradientVector grads_to_vector(const ParamVector& schema, const std::vector<ad::NodePtr>& gnodes) {
    if (gnodes.size() != schema.params.size()) throw std::invalid_argument("gradient slot count mismatch");
    GradientVector out;
    for (std::size_t i = 0; i < gnodes.size(); ++i) out.params.push_back({schema.params[i].name, gnodes[i]->value});
    return out;
}

Tensor forward(const ParamVector& p, const Tensor& inputs) {
    const Architecture arch = arch_of(p);
    if (inputs.rank() != 2 || inputs.cols() != arch.input_dim)
        throw std::invalid_argument("forward: input shape " + inputs.shape_str() + " does not match input_dim " +
                                    std::to_string(arch.input_dim));
    auto logits = logits_graph(param_constants(p), ad::constant(inputs));
    require_finite(logits->value, "forward logits");
    return logits->value;
}

Tensor softmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) throw std::invalid_argument("softmax_rows: need a 2-D tensor");
    Tensor out(logits.shape());
    for (int i = 0; i < logits.rows(); ++i) {
        double mx = logits.at(i, 0);
        for (int j = 1; j < logits.cols(); ++j) mx = std::max(mx, logits.at(i, j));
        double z = 0.0;
        for (int j = 0; j < logits.cols(); ++j) z += std::exp(logits.at(i, j) - mx);
        for (int j = 0; j < logits.cols(); ++j) out.at(i, j) = std::exp(logits.at(i, j) - mx) / z;
    }
    return out;
}

double ce_loss(const ParamVector& p, const LabeledBatch& batch) {
    validate_batch(p, batch);
    auto loss = ce_graph(logits_graph(param_constants(p), ad::constant(batch.inputs)), batch.labels);
    require_finite(loss->value, "cross-entropy loss");
    return loss->value[0];
}

GradientVector grad(const ParamVector& p, const LabeledBatch& batch) {
    validate_batch(p, batch);
    auto leaves = param_leaves(p);
    auto loss = ce_graph(logits_graph(leaves, ad::constant(batch.inputs)), batch.labels);
    auto g = grads_to_vector(p, grad_nodes(loss, leaves));
    for (const auto& e : g.params) require_finite(e.tensor, "gradient " + e.name);
    return g;
}

GradientVector hvp(const ParamVector& p, const LabeledBatch& batch, const GradientVector& v) {
    validate_batch(p, batch);
    if (!p.same_schema(v)) throw std::invalid_argument("hvp: direction schema mismatch");
    auto leaves = param_leaves(p);
    auto loss = ce_graph(logits_graph(leaves, ad::constant(batch.inputs)), batch.labels);
    auto g = grad_nodes(loss, leaves);
    ad::NodePtr s;
    for (std::size_t i = 0; i < leaves.size(); ++i) {
        auto d = ad::dot(g[i], ad::constant(v.params[i].tensor));
        s = s ? ad::add(s, d) : d;
    }
    auto hv = grads_to_vector(p, grad_nodes(s, leaves));
    for (const auto& e : hv.params) require_finite(e.tensor, "hvp " + e.name);
    return hv;
}

double cosine_similarity(const GradientVector& a, const GradientVector& b) {
    const double na = param_norm(a), nb = param_norm(b);
    if (na == 0.0 || nb == 0.0) throw std::invalid_argument("cosine_similarity: zero-norm vector");
    return param_dot(a, b) / (na * nb);
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
    put_u32(os, static_cast<std::uint32_t>(v));
    put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

std::uint32_t get_u32(std::istream& is, const char* what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error(std::string("checkpoint truncated at ") + what);
    return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
           static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

std::uint64_t get_u64(std::istream& is, const char* what) {
    const std::uint64_t lo = get_u32(is, what);
    const std::uint64_t hi = get_u32(is, what);
    return lo | hi << 32;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamVector& p, int epoch, std::int64_t step) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    os.write("MPCK", 4);
    put_u32(os, 1);
    put_u32(os, static_cast<std::uint32_t>(epoch));
    put_u64(os, static_cast<std::uint64_t>(step));
    put_u32(os, static_cast<std::uint32_t>(p.params.size()));
    for (const auto& e : p.params) {
        put_u32(os, static_cast<std::uint32_t>(e.name.size()));
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        put_u32(os, static_cast<std::uint32_t>(e.tensor.rank()));
        for (int d : e.tensor.shape()) put_u32(os, static_cast<std::uint32_t>(d));
        for (std::int64_t i = 0; i < e.tensor.size(); ++i) {
            std::uint64_t bits;
            const double v = e.tensor[i];
            std::memcpy(&bits, &v, 8);
            put_u64(os, bits);
        }
    }
    if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "MPCK", 4) != 0)
        throw std::runtime_error("checkpoint magic mismatch in " + path);
    const std::uint32_t version = get_u32(is, "version");
    if (version != 1) throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    Checkpoint ck;
    ck.epoch = static_cast<int>(get_u32(is, "epoch"));
    ck.step = static_cast<std::int64_t>(get_u64(is, "step"));
    const std::uint32_t n = get_u32(is, "parameter count");
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::uint32_t len = get_u32(is, "name length");
        std::string name(len, '\0');
        if (!is.read(name.data(), len)) throw std::runtime_error("checkpoint truncated at name");
        const std::uint32_t rank = get_u32(is, "rank");
        if (rank > 3) throw std::runtime_error("checkpoint rank out of range");
        std::vector<int> shape;
        for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<int>(get_u32(is, "dimension")));
        Tensor t(shape);
        for (std::int64_t j = 0; j < t.size(); ++j) {
            const std::uint64_t bits = get_u64(is, "tensor data");
            double v;
            std::memcpy(&v, &bits, 8);
            t[j] = v;
        }
        ck.params.params.push_back({std::move(name), std::move(t)});
    }
    arch_of(ck.params);
    return ck;
}

}  // namespace metapriv
