#include "dlens/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#ifdef _OPENMP
#include <omp.h>
#endif

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "dlens/errors.hpp"

namespace dlens {

namespace {

using detail::Node;
using detail::NodePtr;

thread_local bool g_grad_enabled = true;
int g_num_threads = 1;

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t e : shape) {
        if (e <= 0) throw std::invalid_argument("tensor: extents must be positive");
        n *= e;
    }
    return n;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

NodePtr make_leaf(Shape shape, detail::DVec data, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    return n;
}

bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
    for (const Tensor* t : ts)
        if (t->requires_grad()) return true;
    return false;
}

// Creates the output node; records graph edges only when grad mode is on and
// some input needs them.
Tensor make_op(const char* op, Shape shape, detail::DVec data,
               std::initializer_list<const Tensor*> inputs,
               std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    if (g_grad_enabled && any_requires_grad(inputs)) {
        n->requires_grad = true;
        n->op = op;
        n->inputs.reserve(inputs.size());
        for (const Tensor* t : inputs) n->inputs.push_back(t->node());
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor(n);
}

// -----------------------------------------------------------------------
// GEMM kernels, axpy form throughout: every output element accumulates its
// inner sum in ascending k order through independent per-element chains, so
// the loops vectorize under strict FP semantics and row-partitioned parallel
// execution is bitwise deterministic for any thread count. The NT forms go
// through an explicit operand transpose.

// C[M,N] (+)= A[M,K] * B[K,N], rows [r0, r1). Rows are processed four at a
// time so each B row is reused across four accumulation chains.
void gemm_nn_rows(const double* a, const double* b, double* c, int64_t r0, int64_t r1,
                  int64_t k_dim, int64_t n_dim, bool accumulate) {
    int64_t i = r0;
    for (; i + 4 <= r1; i += 4) {
        double* c0 = c + i * n_dim;
        double* c1 = c0 + n_dim;
        double* c2 = c1 + n_dim;
        double* c3 = c2 + n_dim;
        if (!accumulate) {
            std::fill(c0, c0 + n_dim, 0.0);
            std::fill(c1, c1 + n_dim, 0.0);
            std::fill(c2, c2 + n_dim, 0.0);
            std::fill(c3, c3 + n_dim, 0.0);
        }
        const double* a0 = a + i * k_dim;
        const double* a1 = a0 + k_dim;
        const double* a2 = a1 + k_dim;
        const double* a3 = a2 + k_dim;
        for (int64_t k = 0; k < k_dim; ++k) {
            const double v0 = a0[k], v1 = a1[k], v2 = a2[k], v3 = a3[k];
            const double* brow = b + k * n_dim;
            for (int64_t j = 0; j < n_dim; ++j) {
                const double bj = brow[j];
                c0[j] += v0 * bj;
                c1[j] += v1 * bj;
                c2[j] += v2 * bj;
                c3[j] += v3 * bj;
            }
        }
    }
    for (; i < r1; ++i) {
        double* crow = c + i * n_dim;
        if (!accumulate) std::fill(crow, crow + n_dim, 0.0);
        const double* arow = a + i * k_dim;
        for (int64_t k = 0; k < k_dim; ++k) {
            const double av = arow[k];
            const double* brow = b + k * n_dim;
            for (int64_t j = 0; j < n_dim; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[K,N] (+)= A[M,K]^T * B[M,N], output rows (k index) [r0, r1). A and B are
// streamed once per range; the C block stays hot.
void gemm_tn_rows(const double* a, const double* b, double* c, int64_t r0, int64_t r1,
                  int64_t m_dim, int64_t k_dim, int64_t n_dim, bool accumulate) {
    if (!accumulate)
        std::fill(c + r0 * n_dim, c + r1 * n_dim, 0.0);
    for (int64_t i = 0; i < m_dim; ++i) {
        const double* arow = a + i * k_dim;
        const double* brow = b + i * n_dim;
        for (int64_t k = r0; k < r1; ++k) {
            const double av = arow[k];
            double* crow = c + k * n_dim;
            for (int64_t j = 0; j < n_dim; ++j) crow[j] += av * brow[j];
        }
    }
}

// dst[C,R] = src[R,C]^T over row range [r0, r1) of dst
void transpose_rows(const double* src, double* dst, int64_t r0, int64_t r1, int64_t rows,
                    int64_t cols) {
    for (int64_t c = r0; c < r1; ++c)
        for (int64_t r = 0; r < rows; ++r) dst[c * rows + r] = src[r * cols + c];
}

constexpr int64_t kRowBlock = 32;

void gemm_nn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
             bool accumulate) {
    const int64_t blocks = (m + kRowBlock - 1) / kRowBlock;
#pragma omp parallel for schedule(static) if (blocks > 1 && g_num_threads > 1)
    for (int64_t blk = 0; blk < blocks; ++blk)
        gemm_nn_rows(a, b, c, blk * kRowBlock, std::min(m, (blk + 1) * kRowBlock), k, n,
                     accumulate);
}

// C[M,N] (+)= A[M,K] * B[N,K]^T
void gemm_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
             bool accumulate) {
    detail::DVec bt(k * n);
    const int64_t blocks = (k + kRowBlock - 1) / kRowBlock;
#pragma omp parallel for schedule(static) if (blocks > 1 && g_num_threads > 1)
    for (int64_t blk = 0; blk < blocks; ++blk)
        transpose_rows(b, bt.data(), blk * kRowBlock, std::min(k, (blk + 1) * kRowBlock), n, k);
    gemm_nn(a, bt.data(), c, m, k, n, accumulate);
}

void gemm_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
             bool accumulate) {
    const int64_t blocks = (k + kRowBlock - 1) / kRowBlock;
#pragma omp parallel for schedule(static) if (blocks > 1 && g_num_threads > 1)
    for (int64_t blk = 0; blk < blocks; ++blk)
        gemm_tn_rows(a, b, c, blk * kRowBlock, std::min(k, (blk + 1) * kRowBlock), m, k, n,
                     accumulate);
}

int64_t leading_rows(const Tensor& t, int64_t inner) { return t.numel() / inner; }

Shape replace_last(const Shape& s, int64_t v) {
    Shape out = s;
    out.back() = v;
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor basics

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    int64_t n = shape_numel(shape);
    return Tensor(make_leaf(std::move(shape), detail::DVec(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    int64_t n = shape_numel(shape);
    return Tensor(make_leaf(std::move(shape), detail::DVec(n, value), requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
        throw std::invalid_argument("from_data: shape does not match data length");
    return Tensor(make_leaf(std::move(shape), detail::DVec(data.begin(), data.end()),
                            requires_grad));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

const Shape& Tensor::shape() const { return node_->shape; }
int Tensor::rank() const { return static_cast<int>(node_->shape.size()); }

int64_t Tensor::dim(int i) const {
    const int r = rank();
    if (i < 0) i += r;
    if (i < 0 || i >= r) throw std::invalid_argument("dim: index out of range");
    return node_->shape[i];
}

int64_t Tensor::numel() const { return node_->numel(); }
bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
const char* Tensor::op() const { return node_->op; }

std::span<const double> Tensor::data() const { return {node_->data.data(), node_->data.size()}; }

std::span<double> Tensor::mutable_data() { return {node_->data.data(), node_->data.size()}; }

std::span<const double> Tensor::grad() const {
    if (node_->grad.empty()) throw std::logic_error("grad: no gradient present");
    return {node_->grad.data(), node_->grad.size()};
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

double Tensor::item() const {
    if (numel() != 1) throw std::invalid_argument("item: tensor is not scalar");
    return node_->data[0];
}

void Tensor::set_requires_grad(bool value) {
    if (value && node_->backward_fn)
        throw std::logic_error("set_requires_grad: only valid on leaves");
    node_->requires_grad = value;
}

void Tensor::zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(make_leaf(node_->shape, node_->data, false)); }

void Tensor::backward() const {
    if (numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
    // Iterative post-order DFS; every node is visited exactly once.
    std::vector<Node*> topo;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->inputs.size()) {
            Node* child = n->inputs[idx].get();
            ++idx;
            if (child->requires_grad && !visited.count(child)) {
                visited.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            topo.push_back(n);
            stack.pop_back();
        }
    }
    node_->ensure_grad();
    node_->grad[0] += 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
}

GraphSnapshot trace_graph(const Tensor& root) {
    GraphSnapshot snap;
    std::unordered_map<Node*, size_t> ids;
    std::vector<std::pair<Node*, size_t>> stack;
    std::unordered_set<Node*> visited;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->inputs.size()) {
            Node* child = n->inputs[idx].get();
            ++idx;
            if (!visited.count(child)) {
                visited.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            ids[n] = snap.nodes.size();
            GraphSnapshot::NodeInfo info;
            info.op = n->op;
            info.output_id = ids[n];
            for (const auto& in : n->inputs) info.input_ids.push_back(ids.at(in.get()));
            snap.nodes.push_back(std::move(info));
            stack.pop_back();
        }
    }
    return snap;
}

// ---------------------------------------------------------------------------
// Grad mode

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

// ---------------------------------------------------------------------------
// Threads

void set_num_threads(int n) {
    g_num_threads = std::max(1, n);
#ifdef _OPENMP
    omp_set_num_threads(g_num_threads);
#endif
#ifdef __GLIBC__
    // Activation buffers are allocated and freed every op; keep them in the
    // arena instead of bouncing multi-MB blocks through mmap/munmap.
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

int num_threads() { return g_num_threads; }

void init_threads_from_env() {
    int n = static_cast<int>(std::thread::hardware_concurrency());
    if (n <= 0) n = 1;
    if (const char* env = std::getenv("DLENS_THREADS")) {
        char* end = nullptr;
        long v = std::strtol(env, &end, 10);
        if (end != env && v > 0) n = static_cast<int>(v);
    }
    set_num_threads(n);
}

// ---------------------------------------------------------------------------
// Elementwise ops

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    const int64_t n = a.numel();
    detail::DVec out(n);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
#pragma omp parallel for schedule(static) if (n > 16384 && g_num_threads > 1)
    for (int64_t i = 0; i < n; ++i) out[i] = pa[i] + pb[i];
    return make_op("add", a.shape(), std::move(out), {&a, &b}, [](Node& self) {
        for (int k = 0; k < 2; ++k) {
            Node* in = self.inputs[k].get();
            if (!in->requires_grad) continue;
            in->ensure_grad();
            const int64_t n = self.numel();
            for (int64_t i = 0; i < n; ++i) in->grad[i] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    const int64_t n = a.numel();
    detail::DVec out(n);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
#pragma omp parallel for schedule(static) if (n > 16384 && g_num_threads > 1)
    for (int64_t i = 0; i < n; ++i) out[i] = pa[i] - pb[i];
    return make_op("sub", a.shape(), std::move(out), {&a, &b}, [](Node& self) {
        const int64_t n = self.numel();
        Node* ia = self.inputs[0].get();
        Node* ib = self.inputs[1].get();
        if (ia->requires_grad) {
            ia->ensure_grad();
            for (int64_t i = 0; i < n; ++i) ia->grad[i] += self.grad[i];
        }
        if (ib->requires_grad) {
            ib->ensure_grad();
            for (int64_t i = 0; i < n; ++i) ib->grad[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    const int64_t n = a.numel();
    detail::DVec out(n);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
#pragma omp parallel for schedule(static) if (n > 16384 && g_num_threads > 1)
    for (int64_t i = 0; i < n; ++i) out[i] = pa[i] * pb[i];
    return make_op("mul", a.shape(), std::move(out), {&a, &b}, [](Node& self) {
        const int64_t n = self.numel();
        Node* ia = self.inputs[0].get();
        Node* ib = self.inputs[1].get();
        if (ia->requires_grad) {
            ia->ensure_grad();
            for (int64_t i = 0; i < n; ++i) ia->grad[i] += self.grad[i] * ib->data[i];
        }
        if (ib->requires_grad) {
            ib->ensure_grad();
            for (int64_t i = 0; i < n; ++i) ib->grad[i] += self.grad[i] * ia->data[i];
        }
    });
}

Tensor scale(const Tensor& a, double c) {
    const int64_t n = a.numel();
    detail::DVec out(n);
    const double* pa = a.data().data();
#pragma omp parallel for schedule(static) if (n > 16384 && g_num_threads > 1)
    for (int64_t i = 0; i < n; ++i) out[i] = pa[i] * c;
    return make_op("scale", a.shape(), std::move(out), {&a}, [c](Node& self) {
        Node* in = self.inputs[0].get();
        if (!in->requires_grad) return;
        in->ensure_grad();
        const int64_t n = self.numel();
        for (int64_t i = 0; i < n; ++i) in->grad[i] += self.grad[i] * c;
    });
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
    if (x.rank() < 2 || b.rank() != 1 || x.dim(-1) != b.dim(0))
        throw std::invalid_argument("add_bias: expected [.., D] and [D]");
    const int64_t d = b.dim(0);
    const int64_t rows = leading_rows(x, d);
    detail::DVec out(x.numel());
    const double* px = x.data().data();
    const double* pb = b.data().data();
#pragma omp parallel for schedule(static) if (rows > 1 && g_num_threads > 1)
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < d; ++j) out[r * d + j] = px[r * d + j] + pb[j];
    return make_op("add_bias", x.shape(), std::move(out), {&x, &b}, [d, rows](Node& self) {
        Node* ix = self.inputs[0].get();
        Node* ib = self.inputs[1].get();
        if (ix->requires_grad) {
            ix->ensure_grad();
            const int64_t n = self.numel();
            for (int64_t i = 0; i < n; ++i) ix->grad[i] += self.grad[i];
        }
        if (ib->requires_grad) {
            ib->ensure_grad();
#pragma omp parallel for schedule(static) if (d > 1 && g_num_threads > 1)
            for (int64_t j = 0; j < d; ++j) {
                double s = 0.0;
                for (int64_t r = 0; r < rows; ++r) s += self.grad[r * d + j];
                ib->grad[j] += s;
            }
        }
    });
}

Tensor log(const Tensor& a) {
    const int64_t n = a.numel();
    detail::DVec out(n);
    const double* pa = a.data().data();
    for (int64_t i = 0; i < n; ++i) {
        if (!(pa[i] > 0.0))
            throw NumericError("log: non-positive input (apply clamp_min first)");
    }
#pragma omp parallel for schedule(static) if (n > 4096 && g_num_threads > 1)
    for (int64_t i = 0; i < n; ++i) out[i] = std::log(pa[i]);
    return make_op("log", a.shape(), std::move(out), {&a}, [](Node& self) {
        Node* in = self.inputs[0].get();
        if (!in->requires_grad) return;
        in->ensure_grad();
        const int64_t n = self.numel();
        for (int64_t i = 0; i < n; ++i) in->grad[i] += self.grad[i] / in->data[i];
    });
}

Tensor exp(const Tensor& a) {
    const int64_t n = a.numel();
    detail::DVec out(n);
    const double* pa = a.data().data();
#pragma omp parallel for schedule(static) if (n > 4096 && g_num_threads > 1)
    for (int64_t i = 0; i < n; ++i) out[i] = std::exp(pa[i]);
    return make_op("exp", a.shape(), std::move(out), {&a}, [](Node& self) {
        Node* in = self.inputs[0].get();
        if (!in->requires_grad) return;
        in->ensure_grad();
        const int64_t n = self.numel();
        for (int64_t i = 0; i < n; ++i) in->grad[i] += self.grad[i] * self.data[i];
    });
}

Tensor gelu(const Tensor& a) {
    static constexpr double kInvSqrt2 = 0.70710678118654752440;
    static constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    const int64_t n = a.numel();
    detail::DVec out(n);
    const double* pa = a.data().data();
#pragma omp parallel for schedule(static) if (n > 4096 && g_num_threads > 1)
    for (int64_t i = 0; i < n; ++i)
        out[i] = 0.5 * pa[i] * (1.0 + std::erf(pa[i] * kInvSqrt2));
    return make_op("gelu", a.shape(), std::move(out), {&a}, [](Node& self) {
        Node* in = self.inputs[0].get();
        if (!in->requires_grad) return;
        in->ensure_grad();
        const int64_t n = self.numel();
#pragma omp parallel for schedule(static) if (n > 4096 && g_num_threads > 1)
        for (int64_t i = 0; i < n; ++i) {
            const double x = in->data[i];
            const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            in->grad[i] += self.grad[i] * (cdf + x * pdf);
        }
    });
}

Tensor clamp_min(const Tensor& a, double floor) {
    const int64_t n = a.numel();
    detail::DVec out(n);
    const double* pa = a.data().data();
#pragma omp parallel for schedule(static) if (n > 16384 && g_num_threads > 1)
    for (int64_t i = 0; i < n; ++i) out[i] = pa[i] > floor ? pa[i] : floor;
    return make_op("clamp_min", a.shape(), std::move(out), {&a}, [floor](Node& self) {
        Node* in = self.inputs[0].get();
        if (!in->requires_grad) return;
        in->ensure_grad();
        const int64_t n = self.numel();
        for (int64_t i = 0; i < n; ++i)
            if (in->data[i] > floor) in->grad[i] += self.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Matrix products

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() < 1 || b.rank() != 2 || a.dim(-1) != b.dim(0))
        throw std::invalid_argument("matmul: inner extents disagree");
    const int64_t k = b.dim(0), n = b.dim(1);
    const int64_t m = leading_rows(a, k);
    Shape out_shape = a.rank() == 1 ? Shape{n} : replace_last(a.shape(), n);
    detail::DVec out(m * n);
    gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n, false);
    return make_op("matmul", std::move(out_shape), std::move(out), {&a, &b},
                   [m, k, n](Node& self) {
                       Node* ia = self.inputs[0].get();
                       Node* ib = self.inputs[1].get();
                       if (ia->requires_grad) {
                           ia->ensure_grad();
                           // dA += dC * B^T
                           gemm_nt(self.grad.data(), ib->data.data(), ia->grad.data(), m, n, k,
                                   true);
                       }
                       if (ib->requires_grad) {
                           ib->ensure_grad();
                           // dB += A^T * dC
                           gemm_tn(ia->data.data(), self.grad.data(), ib->grad.data(), m, k, n,
                                   true);
                       }
                   });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.rank() < 1 || b.rank() != 2 || a.dim(-1) != b.dim(1))
        throw std::invalid_argument("matmul_nt: inner extents disagree");
    const int64_t k = b.dim(1), n = b.dim(0);
    const int64_t m = leading_rows(a, k);
    Shape out_shape = a.rank() == 1 ? Shape{n} : replace_last(a.shape(), n);
    detail::DVec out(m * n);
    gemm_nt(a.data().data(), b.data().data(), out.data(), m, k, n, false);
    return make_op("matmul_nt", std::move(out_shape), std::move(out), {&a, &b},
                   [m, k, n](Node& self) {
                       Node* ia = self.inputs[0].get();
                       Node* ib = self.inputs[1].get();
                       if (ia->requires_grad) {
                           ia->ensure_grad();
                           // dA += dC * B   ([m,n] x [n,k])
                           gemm_nn(self.grad.data(), ib->data.data(), ia->grad.data(), m, n, k,
                                   true);
                       }
                       if (ib->requires_grad) {
                           ib->ensure_grad();
                           // dB += dC^T * A ([n,m] x [m,k])
                           gemm_tn(self.grad.data(), ia->data.data(), ib->grad.data(), m, n, k,
                                   true);
                       }
                   });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() < 1 || w.rank() != 2 || b.rank() != 1 || x.dim(-1) != w.dim(1) ||
        b.dim(0) != w.dim(0))
        throw std::invalid_argument("linear: shape mismatch");
    const int64_t k = w.dim(1), n = w.dim(0);
    const int64_t m = leading_rows(x, k);
    Shape out_shape = x.rank() == 1 ? Shape{n} : replace_last(x.shape(), n);
    detail::DVec out(m * n);
    const double* pb = b.data().data();
#pragma omp parallel for schedule(static) if (m > 64 && g_num_threads > 1)
    for (int64_t i = 0; i < m; ++i) std::copy(pb, pb + n, out.data() + i * n);
    gemm_nt(x.data().data(), w.data().data(), out.data(), m, k, n, true);
    return make_op("linear", std::move(out_shape), std::move(out), {&x, &w, &b},
                   [m, k, n](Node& self) {
                       Node* ix = self.inputs[0].get();
                       Node* iw = self.inputs[1].get();
                       Node* ib = self.inputs[2].get();
                       if (ix->requires_grad) {
                           ix->ensure_grad();
                           gemm_nn(self.grad.data(), iw->data.data(), ix->grad.data(), m, n, k,
                                   true);
                       }
                       if (iw->requires_grad) {
                           iw->ensure_grad();
                           gemm_tn(self.grad.data(), ix->data.data(), iw->grad.data(), m, n, k,
                                   true);
                       }
                       if (ib->requires_grad) {
                           ib->ensure_grad();
#pragma omp parallel for schedule(static) if (n > 1 && g_num_threads > 1)
                           for (int64_t j = 0; j < n; ++j) {
                               double s = 0.0;
                               for (int64_t i = 0; i < m; ++i) s += self.grad[i * n + j];
                               ib->grad[j] += s;
                           }
                       }
                   });
}

Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& rows) {
    if (x.rank() < 2) throw std::invalid_argument("gather_rows: expected [.., C]");
    const int64_t c = x.dim(-1);
    const int64_t total_rows = leading_rows(x, c);
    const int64_t n = static_cast<int64_t>(rows.size());
    for (int64_t r : rows)
        if (r < 0 || r >= total_rows)
            throw std::invalid_argument("gather_rows: row index out of range");
    detail::DVec out(n * c);
    const double* px = x.data().data();
#pragma omp parallel for schedule(static) if (n > 64 && g_num_threads > 1)
    for (int64_t i = 0; i < n; ++i)
        std::copy(px + rows[i] * c, px + (rows[i] + 1) * c, out.data() + i * c);
    auto idx = std::make_shared<std::vector<int64_t>>(rows);
    return make_op("gather_rows", Shape{n, c}, std::move(out), {&x}, [c, n, idx](Node& self) {
        Node* in = self.inputs[0].get();
        if (!in->requires_grad) return;
        in->ensure_grad();
        // Sequential scatter: duplicate indices are allowed.
        for (int64_t i = 0; i < n; ++i) {
            double* dst = in->grad.data() + (*idx)[i] * c;
            const double* g = self.grad.data() + i * c;
            for (int64_t j = 0; j < c; ++j) dst[j] += g[j];
        }
    });
}

namespace {
void check_bmm(const Tensor& a, const Tensor& b, bool transposed, const char* op) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0))
        throw std::invalid_argument(std::string(op) + ": expected rank-3 tensors, same groups");
    const int64_t inner_a = a.dim(2);
    const int64_t inner_b = transposed ? b.dim(2) : b.dim(1);
    if (inner_a != inner_b) throw std::invalid_argument(std::string(op) + ": shape mismatch");
}
}  // namespace

Tensor bmm(const Tensor& a, const Tensor& b) {
    check_bmm(a, b, false, "bmm");
    const int64_t g = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    detail::DVec out(g * m * n);
    {
        const double* pa = a.data().data();
        const double* pb = b.data().data();
        double* pc = out.data();
#pragma omp parallel for schedule(static) if (g > 1 && g_num_threads > 1)
        for (int64_t gi = 0; gi < g; ++gi)
            gemm_nn_rows(pa + gi * m * k, pb + gi * k * n, pc + gi * m * n, 0, m, k, n, false);
    }
    return make_op("bmm", Shape{g, m, n}, std::move(out), {&a, &b}, [g, m, k, n](Node& self) {
        Node* ia = self.inputs[0].get();
        Node* ib = self.inputs[1].get();
        if (ia->requires_grad) {
            ia->ensure_grad();
            // dA[g] = dC[g] * B[g]^T
#pragma omp parallel for schedule(static) if (g > 1 && g_num_threads > 1)
            for (int64_t gi = 0; gi < g; ++gi) {
                detail::DVec bt(k * n);
                transpose_rows(ib->data.data() + gi * k * n, bt.data(), 0, n, k, n);
                gemm_nn_rows(self.grad.data() + gi * m * n, bt.data(),
                             ia->grad.data() + gi * m * k, 0, m, n, k, true);
            }
        }
        if (ib->requires_grad) {
            ib->ensure_grad();
#pragma omp parallel for schedule(static) if (g > 1 && g_num_threads > 1)
            for (int64_t gi = 0; gi < g; ++gi)
                gemm_tn_rows(self.inputs[0]->data.data() + gi * m * k,
                             self.grad.data() + gi * m * n, ib->grad.data() + gi * k * n, 0, k,
                             m, k, n, true);
        }
    });
}

Tensor bmm_nt(const Tensor& a, const Tensor& b) {
    check_bmm(a, b, true, "bmm_nt");
    const int64_t g = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
    detail::DVec out(g * m * n);
    {
        const double* pa = a.data().data();
        const double* pb = b.data().data();
        double* pc = out.data();
#pragma omp parallel for schedule(static) if (g > 1 && g_num_threads > 1)
        for (int64_t gi = 0; gi < g; ++gi) {
            detail::DVec bt(k * n);
            transpose_rows(pb + gi * n * k, bt.data(), 0, k, n, k);
            gemm_nn_rows(pa + gi * m * k, bt.data(), pc + gi * m * n, 0, m, k, n, false);
        }
    }
    return make_op("bmm_nt", Shape{g, m, n}, std::move(out), {&a, &b}, [g, m, k, n](Node& self) {
        Node* ia = self.inputs[0].get();
        Node* ib = self.inputs[1].get();
        if (ia->requires_grad) {
            ia->ensure_grad();
#pragma omp parallel for schedule(static) if (g > 1 && g_num_threads > 1)
            for (int64_t gi = 0; gi < g; ++gi)
                gemm_nn_rows(self.grad.data() + gi * m * n, ib->data.data() + gi * n * k,
                             ia->grad.data() + gi * m * k, 0, m, n, k, true);
        }
        if (ib->requires_grad) {
            ib->ensure_grad();
#pragma omp parallel for schedule(static) if (g > 1 && g_num_threads > 1)
            for (int64_t gi = 0; gi < g; ++gi)
                gemm_tn_rows(self.grad.data() + gi * m * n,
                             self.inputs[0]->data.data() + gi * m * k,
                             ib->grad.data() + gi * n * k, 0, n, m, n, k, true);
        }
    });
}

// ---------------------------------------------------------------------------
// Softmax family

Tensor softmax(const Tensor& logits, int axis) {
    const int r = logits.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw std::invalid_argument("softmax: axis out of range");
    const int64_t len = logits.shape()[axis];
    int64_t inner = 1;
    for (int i = axis + 1; i < r; ++i) inner *= logits.shape()[i];
    const int64_t outer = logits.numel() / (len * inner);
    detail::DVec out(logits.numel());
    const double* px = logits.data().data();
    const int64_t rows = outer * inner;
    for (int64_t i = 0; i < logits.numel(); ++i)
        if (!std::isfinite(px[i])) throw NumericError("softmax: non-finite input");
#pragma omp parallel for schedule(static) if (rows > 1 && g_num_threads > 1)
    for (int64_t row = 0; row < rows; ++row) {
        const int64_t o = row / inner, in = row % inner;
        const int64_t base = o * len * inner + in;
        double mx = -std::numeric_limits<double>::infinity();
        for (int64_t k = 0; k < len; ++k) mx = std::max(mx, px[base + k * inner]);
        double denom = 0.0;
        for (int64_t k = 0; k < len; ++k) {
            const double e = std::exp(px[base + k * inner] - mx);
            out[base + k * inner] = e;
            denom += e;
        }
        const double inv = 1.0 / denom;
        for (int64_t k = 0; k < len; ++k) out[base + k * inner] *= inv;
    }
    return make_op("softmax", logits.shape(), std::move(out), {&logits},
                   [len, inner, rows](Node& self) {
                       Node* in = self.inputs[0].get();
                       if (!in->requires_grad) return;
                       in->ensure_grad();
#pragma omp parallel for schedule(static) if (rows > 1 && g_num_threads > 1)
                       for (int64_t row = 0; row < rows; ++row) {
                           const int64_t o = row / inner, ii = row % inner;
                           const int64_t base = o * len * inner + ii;
                           double dot = 0.0;
                           for (int64_t k = 0; k < len; ++k)
                               dot += self.grad[base + k * inner] * self.data[base + k * inner];
                           for (int64_t k = 0; k < len; ++k) {
                               const int64_t idx = base + k * inner;
                               in->grad[idx] += (self.grad[idx] - dot) * self.data[idx];
                           }
                       }
                   });
}

Tensor causal_softmax(const Tensor& scores) {
    if (scores.rank() != 3 || scores.dim(1) != scores.dim(2))
        throw std::invalid_argument("causal_softmax: expected [G,T,T]");
    const int64_t g = scores.dim(0), t_len = scores.dim(1);
    detail::DVec out(scores.numel(), 0.0);
    const double* px = scores.data().data();
    const int64_t rows = g * t_len;
    for (int64_t row = 0; row < rows; ++row) {
        const int64_t t = row % t_len;
        for (int64_t j = 0; j <= t; ++j)
            if (!std::isfinite(px[row * t_len + j]))
                throw NumericError("causal_softmax: non-finite input");
    }
#pragma omp parallel for schedule(static) if (rows > 1 && g_num_threads > 1)
    for (int64_t row = 0; row < rows; ++row) {
        const int64_t t = row % t_len;
        const int64_t base = row * t_len;
        double mx = -std::numeric_limits<double>::infinity();
        for (int64_t j = 0; j <= t; ++j) mx = std::max(mx, px[base + j]);
        double denom = 0.0;
        for (int64_t j = 0; j <= t; ++j) {
            const double e = std::exp(px[base + j] - mx);
            out[base + j] = e;
            denom += e;
        }
        const double inv = 1.0 / denom;
        for (int64_t j = 0; j <= t; ++j) out[base + j] *= inv;
    }
    return make_op("causal_softmax", scores.shape(), std::move(out), {&scores},
                   [t_len, rows](Node& self) {
                       Node* in = self.inputs[0].get();
                       if (!in->requires_grad) return;
                       in->ensure_grad();
#pragma omp parallel for schedule(static) if (rows > 1 && g_num_threads > 1)
                       for (int64_t row = 0; row < rows; ++row) {
                           const int64_t t = row % t_len;
                           const int64_t base = row * t_len;
                           double dot = 0.0;
                           for (int64_t j = 0; j <= t; ++j)
                               dot += self.grad[base + j] * self.data[base + j];
                           for (int64_t j = 0; j <= t; ++j)
                               in->grad[base + j] +=
                                   (self.grad[base + j] - dot) * self.data[base + j];
                       }
                   });
}

// ---------------------------------------------------------------------------
// Layer norm. Per-row mean/variance over the trailing axis (population
// variance); epsilon 1e-12 keeps the fp64 normalization exact to ~1e-12.

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
    static constexpr double kEps = 1e-12;
    if (x.rank() < 1 || gain.rank() != 1 || bias.rank() != 1)
        throw std::invalid_argument("layernorm: expected x [.., D], gain [D], bias [D]");
    const int64_t d = x.dim(-1);
    if (gain.dim(0) != d || bias.dim(0) != d)
        throw std::invalid_argument("layernorm: gain/bias length mismatch");
    const int64_t rows = leading_rows(x, d);
    detail::DVec out(x.numel());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    auto means = std::make_shared<std::vector<double>>(rows);
    const double* px = x.data().data();
    const double* pg = gain.data().data();
    const double* pb = bias.data().data();
#pragma omp parallel for schedule(static) if (rows > 1 && g_num_threads > 1)
    for (int64_t r = 0; r < rows; ++r) {
        const double* row = px + r * d;
        double mean = 0.0;
        for (int64_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            const double c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + kEps);
        (*inv_std)[r] = inv;
        (*means)[r] = mean;
        for (int64_t j = 0; j < d; ++j)
            out[r * d + j] = (row[j] - mean) * inv * pg[j] + pb[j];
    }
    return make_op(
        "layernorm", x.shape(), std::move(out), {&x, &gain, &bias},
        [d, rows, inv_std, means](Node& self) {
            Node* ix = self.inputs[0].get();
            Node* ig = self.inputs[1].get();
            Node* ib = self.inputs[2].get();
            if (ix->requires_grad) {
                ix->ensure_grad();
#pragma omp parallel for schedule(static) if (rows > 1 && g_num_threads > 1)
                for (int64_t r = 0; r < rows; ++r) {
                    const double inv = (*inv_std)[r];
                    const double mean = (*means)[r];
                    const double* xrow = ix->data.data() + r * d;
                    const double* grow = self.grad.data() + r * d;
                    const double* gg = ig->data.data();
                    double sum_dl = 0.0, sum_dlxh = 0.0;
                    for (int64_t j = 0; j < d; ++j) {
                        const double xh = (xrow[j] - mean) * inv;
                        const double dl = grow[j] * gg[j];
                        sum_dl += dl;
                        sum_dlxh += dl * xh;
                    }
                    const double inv_d = 1.0 / static_cast<double>(d);
                    for (int64_t j = 0; j < d; ++j) {
                        const double xh = (xrow[j] - mean) * inv;
                        const double dl = grow[j] * gg[j];
                        ix->grad[r * d + j] +=
                            inv * (dl - sum_dl * inv_d - xh * sum_dlxh * inv_d);
                    }
                }
            }
            if (ig->requires_grad || ib->requires_grad) {
                if (ig->requires_grad) ig->ensure_grad();
                if (ib->requires_grad) ib->ensure_grad();
#pragma omp parallel for schedule(static) if (d > 1 && g_num_threads > 1)
                for (int64_t j = 0; j < d; ++j) {
                    double sg = 0.0, sb = 0.0;
                    for (int64_t r = 0; r < rows; ++r) {
                        const double xh =
                            (ix->data[r * d + j] - (*means)[r]) * (*inv_std)[r];
                        sg += self.grad[r * d + j] * xh;
                        sb += self.grad[r * d + j];
                    }
                    if (ig->requires_grad) ig->grad[j] += sg;
                    if (ib->requires_grad) ib->grad[j] += sb;
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Embedding lookup

Tensor embedding_lookup(const Tensor& table, const std::vector<int32_t>& ids,
                        Shape prefix_shape) {
    if (table.rank() != 2) throw std::invalid_argument("embedding_lookup: table must be [V, D]");
    const int64_t v = table.dim(0), d = table.dim(1);
    const int64_t n = static_cast<int64_t>(ids.size());
    for (int32_t id : ids)
        if (id < 0 || id >= v) throw std::invalid_argument("embedding_lookup: id out of range");
    Shape out_shape = prefix_shape.empty() ? Shape{n} : prefix_shape;
    if (shape_numel(out_shape) != n)
        throw std::invalid_argument("embedding_lookup: prefix shape does not cover ids");
    out_shape.push_back(d);
    detail::DVec out(n * d);
    const double* pt = table.data().data();
#pragma omp parallel for schedule(static) if (n > 1 && g_num_threads > 1)
    for (int64_t i = 0; i < n; ++i)
        std::copy(pt + ids[i] * d, pt + (ids[i] + 1) * d, out.data() + i * d);
    auto ids_copy = std::make_shared<std::vector<int32_t>>(ids);
    return make_op("embedding_lookup", std::move(out_shape), std::move(out), {&table},
                   [d, n, ids_copy](Node& self) {
                       Node* it = self.inputs[0].get();
                       if (!it->requires_grad) return;
                       it->ensure_grad();
                       // Sequential scatter: repeated ids hit the same row.
                       for (int64_t i = 0; i < n; ++i) {
                           double* trow = it->grad.data() + (*ids_copy)[i] * d;
                           const double* grow = self.grad.data() + i * d;
                           for (int64_t j = 0; j < d; ++j) trow[j] += grow[j];
                       }
                   });
}

// ---------------------------------------------------------------------------
// Cross entropy (fused log-softmax + NLL, token-weighted mean)

Tensor cross_entropy(const Tensor& logits, const std::vector<int32_t>& targets,
                     const std::vector<double>& weights) {
    if (logits.rank() < 2) throw std::invalid_argument("cross_entropy: logits must be [.., V]");
    const int64_t v = logits.dim(-1);
    const int64_t rows = leading_rows(logits, v);
    if (static_cast<int64_t>(targets.size()) != rows ||
        static_cast<int64_t>(weights.size()) != rows)
        throw std::invalid_argument("cross_entropy: targets/weights length mismatch");
    double weight_total = 0.0;
    for (double w : weights) weight_total += w;
    if (!(weight_total > 0.0))
        throw std::invalid_argument("cross_entropy: total weight must be positive");
    const double* px = logits.data().data();
    for (int32_t t : targets)
        if (t < 0 || t >= v) throw std::invalid_argument("cross_entropy: target out of range");
    for (int64_t i = 0; i < logits.numel(); ++i)
        if (!std::isfinite(px[i])) throw NumericError("cross_entropy: non-finite logits");
    auto lse = std::make_shared<std::vector<double>>(rows);
    std::vector<double> nll(rows);
#pragma omp parallel for schedule(static) if (rows > 1 && g_num_threads > 1)
    for (int64_t r = 0; r < rows; ++r) {
        const int32_t t = targets[r];
        const double* row = px + r * v;
        double mx = -std::numeric_limits<double>::infinity();
        for (int64_t j = 0; j < v; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (int64_t j = 0; j < v; ++j) denom += std::exp(row[j] - mx);
        (*lse)[r] = mx + std::log(denom);
        nll[r] = (*lse)[r] - row[t];
    }
    double loss = 0.0;
    for (int64_t r = 0; r < rows; ++r) loss += weights[r] * nll[r];
    loss /= weight_total;
    auto tgt = std::make_shared<std::vector<int32_t>>(targets);
    auto wts = std::make_shared<std::vector<double>>(weights);
    return make_op("cross_entropy", Shape{1}, {loss}, {&logits},
                   [v, rows, lse, tgt, wts, weight_total](Node& self) {
                       Node* in = self.inputs[0].get();
                       if (!in->requires_grad) return;
                       in->ensure_grad();
                       const double g0 = self.grad[0] / weight_total;
#pragma omp parallel for schedule(static) if (rows > 1 && g_num_threads > 1)
                       for (int64_t r = 0; r < rows; ++r) {
                           const double w = (*wts)[r];
                           if (w == 0.0) continue;
                           const double* row = in->data.data() + r * v;
                           double* grow = in->grad.data() + r * v;
                           const double gw = g0 * w;
                           for (int64_t j = 0; j < v; ++j)
                               grow[j] += gw * std::exp(row[j] - (*lse)[r]);
                           grow[(*tgt)[r]] -= gw;
                       }
                   });
}

// ---------------------------------------------------------------------------
// Reductions / reshaping

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return make_op("sum", Shape{1}, {s}, {&a}, [](Node& self) {
        Node* in = self.inputs[0].get();
        if (!in->requires_grad) return;
        in->ensure_grad();
        const double g = self.grad[0];
        const int64_t n = in->numel();
        for (int64_t i = 0; i < n; ++i) in->grad[i] += g;
    });
}

Tensor scale_rows(const Tensor& x, const Tensor& w) {
    if (x.rank() < 2 || w.rank() != 1)
        throw std::invalid_argument("scale_rows: expected x [.., V] and w [R]");
    const int64_t v = x.dim(-1);
    const int64_t rows = leading_rows(x, v);
    if (w.dim(0) != rows) throw std::invalid_argument("scale_rows: row count mismatch");
    detail::DVec out(x.numel());
    const double* px = x.data().data();
    const double* pw = w.data().data();
#pragma omp parallel for schedule(static) if (rows > 1 && g_num_threads > 1)
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < v; ++j) out[r * v + j] = px[r * v + j] * pw[r];
    return make_op("scale_rows", x.shape(), std::move(out), {&x, &w}, [v, rows](Node& self) {
        Node* ix = self.inputs[0].get();
        Node* iw = self.inputs[1].get();
        if (ix->requires_grad) {
            ix->ensure_grad();
#pragma omp parallel for schedule(static) if (rows > 1 && g_num_threads > 1)
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t j = 0; j < v; ++j)
                    ix->grad[r * v + j] += self.grad[r * v + j] * iw->data[r];
        }
        if (iw->requires_grad) {
            iw->ensure_grad();
#pragma omp parallel for schedule(static) if (rows > 1 && g_num_threads > 1)
            for (int64_t r = 0; r < rows; ++r) {
                double s = 0.0;
                for (int64_t j = 0; j < v; ++j) s += self.grad[r * v + j] * ix->data[r * v + j];
                iw->grad[r] += s;
            }
        }
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw std::invalid_argument("reshape: element count mismatch");
    detail::DVec out(a.data().begin(), a.data().end());
    return make_op("reshape", std::move(shape), std::move(out), {&a}, [](Node& self) {
        Node* in = self.inputs[0].get();
        if (!in->requires_grad) return;
        in->ensure_grad();
        const int64_t n = self.numel();
        for (int64_t i = 0; i < n; ++i) in->grad[i] += self.grad[i];
    });
}

Tensor split_heads(const Tensor& x, int n_heads) {
    if (x.rank() != 3) throw std::invalid_argument("split_heads: expected [B,T,D]");
    const int64_t b = x.dim(0), t = x.dim(1), d = x.dim(2);
    if (d % n_heads != 0) throw std::invalid_argument("split_heads: D not divisible by heads");
    const int64_t h = n_heads, hd = d / h;
    detail::DVec out(x.numel());
    const double* px = x.data().data();
#pragma omp parallel for schedule(static) if (b * h > 1 && g_num_threads > 1)
    for (int64_t bh = 0; bh < b * h; ++bh) {
        const int64_t bi = bh / h, hi = bh % h;
        for (int64_t ti = 0; ti < t; ++ti)
            std::copy(px + (bi * t + ti) * d + hi * hd, px + (bi * t + ti) * d + (hi + 1) * hd,
                      out.data() + (bh * t + ti) * hd);
    }
    return make_op("split_heads", Shape{b * h, t, hd}, std::move(out), {&x},
                   [b, t, d, h, hd](Node& self) {
                       Node* in = self.inputs[0].get();
                       if (!in->requires_grad) return;
                       in->ensure_grad();
#pragma omp parallel for schedule(static) if (b * h > 1 && g_num_threads > 1)
                       for (int64_t bh = 0; bh < b * h; ++bh) {
                           const int64_t bi = bh / h, hi = bh % h;
                           for (int64_t ti = 0; ti < t; ++ti) {
                               const double* g = self.grad.data() + (bh * t + ti) * hd;
                               double* dst = in->grad.data() + (bi * t + ti) * d + hi * hd;
                               for (int64_t k = 0; k < hd; ++k) dst[k] += g[k];
                           }
                       }
                   });
}

Tensor merge_heads(const Tensor& x, int n_heads) {
    if (x.rank() != 3) throw std::invalid_argument("merge_heads: expected [B*H,T,hd]");
    const int64_t bh_total = x.dim(0), t = x.dim(1), hd = x.dim(2);
    if (bh_total % n_heads != 0)
        throw std::invalid_argument("merge_heads: groups not divisible by heads");
    const int64_t h = n_heads, b = bh_total / h, d = hd * h;
    detail::DVec out(x.numel());
    const double* px = x.data().data();
#pragma omp parallel for schedule(static) if (bh_total > 1 && g_num_threads > 1)
    for (int64_t bh = 0; bh < bh_total; ++bh) {
        const int64_t bi = bh / h, hi = bh % h;
        for (int64_t ti = 0; ti < t; ++ti)
            std::copy(px + (bh * t + ti) * hd, px + (bh * t + ti + 1) * hd,
                      out.data() + (bi * t + ti) * d + hi * hd);
    }
    return make_op("merge_heads", Shape{b, t, d}, std::move(out), {&x},
                   [b, t, d, h, hd](Node& self) {
                       Node* in = self.inputs[0].get();
                       if (!in->requires_grad) return;
                       in->ensure_grad();
#pragma omp parallel for schedule(static) if (b * h > 1 && g_num_threads > 1)
                       for (int64_t bh = 0; bh < b * h; ++bh) {
                           const int64_t bi = bh / h, hi = bh % h;
                           for (int64_t ti = 0; ti < t; ++ti) {
                               const double* g =
                                   self.grad.data() + (bi * t + ti) * d + hi * hd;
                               double* dst = in->grad.data() + (bh * t + ti) * hd;
                               for (int64_t k = 0; k < hd; ++k) dst[k] += g[k];
                           }
                       }
                   });
}

// ---------------------------------------------------------------------------
// Finite differences

std::vector<double> finite_difference_grad(const std::function<double(const Tensor&)>& f,
                                           const Tensor& x, double h) {
    NoGradGuard guard;
    const int64_t n = x.numel();
    std::vector<double> base(x.data().begin(), x.data().end());
    std::vector<double> out(n);
    for (int64_t i = 0; i < n; ++i) {
        std::vector<double> plus = base, minus = base;
        plus[i] += h;
        minus[i] -= h;
        const double fp = f(Tensor::from_data(x.shape(), std::move(plus)));
        const double fm = f(Tensor::from_data(x.shape(), std::move(minus)));
        out[i] = (fp - fm) / (2.0 * h);
    }
    return out;
}

}  // namespace dlens
