#include "gatenas/executor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "gatenas/errors.hpp"

namespace gatenas {

namespace {

int floor_div(int a, int b)
{
    int q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) {
        --q;
    }
    return q;
}

// Output rows y with 0 <= y*stride + offset < extent.
struct Range {
    int begin;
    int end;
};

Range valid_range(int out_extent, int in_extent, int offset, int stride)
{
    const int begin = std::max(0, floor_div(-offset + stride - 1, stride));
    const int last = floor_div(in_extent - 1 - offset, stride);
    const int end = std::min(out_extent, last + 1);
    return Range{begin, std::max(begin, end)};
}

// Direct convolution. For each output element the products are accumulated
// in (input channel, ky, kx) order, so a channel that is exactly zero adds
// exactly zero and deleting it leaves every sum bit-identical.
void conv_forward(const double* in, int channels, int height, int width, const double* weights, int units,
                  int kernel, int stride, double* out, int out_h, int out_w)
{
    const int pad = kernel / 2;
    const int kk = kernel * kernel;
    for (int o = 0; o < units; ++o) {
        double* op = out + static_cast<std::size_t>(o) * out_h * out_w;
        for (int i = 0; i < channels; ++i) {
            const double* ip = in + static_cast<std::size_t>(i) * height * width;
            const double* wk = weights + (static_cast<std::size_t>(o) * channels + i) * kk;
            for (int ky = 0; ky < kernel; ++ky) {
                const int dy = ky - pad;
                const Range ry = valid_range(out_h, height, dy, stride);
                for (int kx = 0; kx < kernel; ++kx) {
                    const int dx = kx - pad;
                    const Range rx = valid_range(out_w, width, dx, stride);
                    const double wv = wk[ky * kernel + kx];
                    if (stride == 1) {
                        for (int y = ry.begin; y < ry.end; ++y) {
                            double* orow = op + y * out_w;
                            const double* irow = ip + (y + dy) * width + dx;
                            for (int x = rx.begin; x < rx.end; ++x) {
                                orow[x] += wv * irow[x];
                            }
                        }
                    } else {
                        for (int y = ry.begin; y < ry.end; ++y) {
                            double* orow = op + y * out_w;
                            const double* irow = ip + (y * stride + dy) * width + dx;
                            for (int x = rx.begin; x < rx.end; ++x) {
                                orow[x] += wv * irow[x * stride];
                            }
                        }
                    }
                }
            }
        }
    }
}

void conv_backward(const double* in, int channels, int height, int width, const double* weights, int units,
                   int kernel, int stride, const double* gout, int out_h, int out_w, double* gin, double* gw)
{
    const int pad = kernel / 2;
    const int kk = kernel * kernel;
    for (int o = 0; o < units; ++o) {
        const double* gp = gout + static_cast<std::size_t>(o) * out_h * out_w;
        for (int i = 0; i < channels; ++i) {
            const double* ip = in + static_cast<std::size_t>(i) * height * width;
            double* gip = gin + static_cast<std::size_t>(i) * height * width;
            const std::size_t wbase = (static_cast<std::size_t>(o) * channels + i) * kk;
            for (int ky = 0; ky < kernel; ++ky) {
                const int dy = ky - pad;
                const Range ry = valid_range(out_h, height, dy, stride);
                for (int kx = 0; kx < kernel; ++kx) {
                    const int dx = kx - pad;
                    const Range rx = valid_range(out_w, width, dx, stride);
                    const double wv = weights[wbase + ky * kernel + kx];
                    double acc = 0.0;
                    for (int y = ry.begin; y < ry.end; ++y) {
                        const double* grow = gp + y * out_w;
                        const int iy = y * stride + dy;
                        const double* irow = ip + iy * width + dx;
                        double* girow = gip + iy * width + dx;
                        for (int x = rx.begin; x < rx.end; ++x) {
                            acc += grow[x] * irow[x * stride];
                            girow[x * stride] += wv * grow[x];
                        }
                    }
                    gw[wbase + ky * kernel + kx] += acc;
                }
            }
        }
    }
}

void depthwise_forward(const double* in, int channels, int height, int width, const double* weights, int kernel,
                       int stride, double* out, int out_h, int out_w)
{
    const int pad = kernel / 2;
    for (int c = 0; c < channels; ++c) {
        const double* ip = in + static_cast<std::size_t>(c) * height * width;
        double* op = out + static_cast<std::size_t>(c) * out_h * out_w;
        const double* wk = weights + static_cast<std::size_t>(c) * kernel * kernel;
        for (int ky = 0; ky < kernel; ++ky) {
            const int dy = ky - pad;
            const Range ry = valid_range(out_h, height, dy, stride);
            for (int kx = 0; kx < kernel; ++kx) {
                const int dx = kx - pad;
                const Range rx = valid_range(out_w, width, dx, stride);
                const double wv = wk[ky * kernel + kx];
                for (int y = ry.begin; y < ry.end; ++y) {
                    double* orow = op + y * out_w;
                    const double* irow = ip + (y * stride + dy) * width + dx;
                    for (int x = rx.begin; x < rx.end; ++x) {
                        orow[x] += wv * irow[x * stride];
                    }
                }
            }
        }
    }
}

void depthwise_backward(const double* in, int channels, int height, int width, const double* weights, int kernel,
                        int stride, const double* gout, int out_h, int out_w, double* gin, double* gw)
{
    const int pad = kernel / 2;
    for (int c = 0; c < channels; ++c) {
        const double* ip = in + static_cast<std::size_t>(c) * height * width;
        double* gip = gin + static_cast<std::size_t>(c) * height * width;
        const double* gp = gout + static_cast<std::size_t>(c) * out_h * out_w;
        const std::size_t wbase = static_cast<std::size_t>(c) * kernel * kernel;
        for (int ky = 0; ky < kernel; ++ky) {
            const int dy = ky - pad;
            const Range ry = valid_range(out_h, height, dy, stride);
            for (int kx = 0; kx < kernel; ++kx) {
                const int dx = kx - pad;
                const Range rx = valid_range(out_w, width, dx, stride);
                const double wv = weights[wbase + ky * kernel + kx];
                double acc = 0.0;
                for (int y = ry.begin; y < ry.end; ++y) {
                    const double* grow = gp + y * out_w;
                    const int iy = y * stride + dy;
                    const double* irow = ip + iy * width + dx;
                    double* girow = gip + iy * width + dx;
                    for (int x = rx.begin; x < rx.end; ++x) {
                        acc += grow[x] * irow[x * stride];
                        girow[x * stride] += wv * grow[x];
                    }
                }
                gw[wbase + ky * kernel + kx] += acc;
            }
        }
    }
}

const Param& param_named(const Node& node, std::string_view name)
{
    const Param* p = node.find_param(name);
    if (p == nullptr) {
        throw StructuralError("node '" + node.name + "' is missing parameter '" + std::string(name) + "'");
    }
    return *p;
}

const Param& buffer_named(const Node& node, std::string_view name)
{
    for (const auto& b : node.buffers) {
        if (b.name == name) {
            return b;
        }
    }
    throw StructuralError("node '" + node.name + "' is missing buffer '" + std::string(name) + "'");
}

std::size_t param_index(const Node& node, std::string_view name)
{
    for (std::size_t k = 0; k < node.params.size(); ++k) {
        if (node.params[k].name == name) {
            return k;
        }
    }
    throw StructuralError("node '" + node.name + "' is missing parameter '" + std::string(name) + "'");
}

Tensor activation_tensor(int batch, const Shape& s)
{
    return Tensor({batch, s.channels, s.height, s.width});
}

} // namespace

Executor::Executor(const NetworkGraph& graph) : graph_(&graph) {}

double Executor::forward(const Tensor& inputs, std::span<const int> labels, Mode mode,
                         std::span<const double> mask_values)
{
    const NetworkGraph& g = *graph_;
    ready_ = false;
    mode_ = mode;
    acts_.assign(g.size(), Tensor{});
    norms_.assign(g.size(), NormCache{});
    mask_scale_.assign(g.size(), {});
    probs_.clear();
    labels_.assign(labels.begin(), labels.end());
    mask_group_count_ = mask_values.size();
    loss_ = std::numeric_limits<double>::quiet_NaN();

    if (inputs.shape.size() != 4) {
        throw StructuralError("input batch must be rank 4 (N, C, H, W)");
    }
    const int batch = inputs.dim(0);
    if (!labels.empty() && static_cast<int>(labels.size()) != batch) {
        throw StructuralError("got " + std::to_string(labels.size()) + " labels for a batch of " +
                              std::to_string(batch));
    }

    for (NodeId id : g.topological_order()) {
        const Node& node = g.node(id);
        const Shape& s = node.shape;
        const std::size_t plane = static_cast<std::size_t>(s.height) * s.width;
        auto in_act = [&](std::size_t k) -> const Tensor& { return acts_[static_cast<std::size_t>(node.inputs[k])]; };
        auto in_shape = [&](std::size_t k) -> const Shape& { return g.node(node.inputs[k]).shape; };

        switch (node.kind) {
        case NodeKind::kInput: {
            const int source = node.source_channels;
            if (inputs.dim(1) != source || inputs.dim(2) != s.height || inputs.dim(3) != s.width) {
                throw StructuralError("node '" + node.name + "': batch shape " + std::to_string(inputs.dim(1)) + "x" +
                                      std::to_string(inputs.dim(2)) + "x" + std::to_string(inputs.dim(3)) +
                                      " does not match input " + std::to_string(source) + "x" +
                                      std::to_string(s.height) + "x" + std::to_string(s.width));
            }
            if (node.input_select.empty()) {
                acts_[id] = inputs;
            } else {
                Tensor out = activation_tensor(batch, s);
                for (int n = 0; n < batch; ++n) {
                    for (int c = 0; c < s.channels; ++c) {
                        const double* src = inputs.ptr() + (static_cast<std::size_t>(n) * source + node.input_select[c]) * plane;
                        std::copy(src, src + plane, out.ptr() + (static_cast<std::size_t>(n) * s.channels + c) * plane);
                    }
                }
                acts_[id] = std::move(out);
            }
            break;
        }
        case NodeKind::kConv: {
            const Shape& is = in_shape(0);
            const Tensor& x = in_act(0);
            Tensor out = activation_tensor(batch, s);
            const double* w = param_named(node, "weight").value.data();
            const std::size_t in_stride = static_cast<std::size_t>(is.size());
            const std::size_t out_stride = static_cast<std::size_t>(s.size());
            for (int n = 0; n < batch; ++n) {
                conv_forward(x.ptr() + n * in_stride, is.channels, is.height, is.width, w, s.channels, node.kernel,
                             node.stride, out.ptr() + n * out_stride, s.height, s.width);
            }
            acts_[id] = std::move(out);
            break;
        }
        case NodeKind::kDepthwiseConv: {
            const Shape& is = in_shape(0);
            const Tensor& x = in_act(0);
            Tensor out = activation_tensor(batch, s);
            const double* w = param_named(node, "weight").value.data();
            for (int n = 0; n < batch; ++n) {
                depthwise_forward(x.ptr() + static_cast<std::size_t>(n) * is.size(), is.channels, is.height, is.width,
                                  w, node.kernel, node.stride, out.ptr() + static_cast<std::size_t>(n) * s.size(),
                                  s.height, s.width);
            }
            acts_[id] = std::move(out);
            break;
        }
        case NodeKind::kDense: {
            const int in_c = in_shape(0).channels;
            const Tensor& x = in_act(0);
            Tensor out = activation_tensor(batch, s);
            const auto& w = param_named(node, "weight").value;
            const auto& b = param_named(node, "bias").value;
            for (int n = 0; n < batch; ++n) {
                const double* xr = x.ptr() + static_cast<std::size_t>(n) * in_c;
                double* orow = out.ptr() + static_cast<std::size_t>(n) * s.channels;
                for (int o = 0; o < s.channels; ++o) {
                    const double* wr = w.data() + static_cast<std::size_t>(o) * in_c;
                    double acc = b[o];
                    for (int i = 0; i < in_c; ++i) {
                        acc += wr[i] * xr[i];
                    }
                    orow[o] = acc;
                }
            }
            acts_[id] = std::move(out);
            break;
        }
        case NodeKind::kBatchNorm: {
            const Tensor& x = in_act(0);
            Tensor out = activation_tensor(batch, s);
            const auto& gamma = param_named(node, "gamma").value;
            const auto& beta = param_named(node, "beta").value;
            NormCache cache;
            cache.mean.assign(s.channels, 0.0);
            cache.var.assign(s.channels, 0.0);
            cache.inv_std.assign(s.channels, 0.0);
            const double count = static_cast<double>(batch) * static_cast<double>(plane);
            if (mode == Mode::kTrain) {
                for (int c = 0; c < s.channels; ++c) {
                    double sum = 0.0;
                    for (int n = 0; n < batch; ++n) {
                        const double* xp = x.ptr() + (static_cast<std::size_t>(n) * s.channels + c) * plane;
                        for (std::size_t p = 0; p < plane; ++p) {
                            sum += xp[p];
                        }
                    }
                    const double mean = sum / count;
                    double sq = 0.0;
                    for (int n = 0; n < batch; ++n) {
                        const double* xp = x.ptr() + (static_cast<std::size_t>(n) * s.channels + c) * plane;
                        for (std::size_t p = 0; p < plane; ++p) {
                            const double d = xp[p] - mean;
                            sq += d * d;
                        }
                    }
                    cache.mean[c] = mean;
                    cache.var[c] = sq / count;
                    cache.inv_std[c] = 1.0 / std::sqrt(cache.var[c] + kBatchNormEpsilon);
                }
            } else {
                const auto& rm = buffer_named(node, "running_mean").value;
                const auto& rv = buffer_named(node, "running_var").value;
                for (int c = 0; c < s.channels; ++c) {
                    cache.mean[c] = rm[c];
                    cache.var[c] = rv[c];
                    cache.inv_std[c] = 1.0 / std::sqrt(rv[c] + kBatchNormEpsilon);
                }
            }
            for (int n = 0; n < batch; ++n) {
                for (int c = 0; c < s.channels; ++c) {
                    const std::size_t off = (static_cast<std::size_t>(n) * s.channels + c) * plane;
                    const double scale = gamma[c] * cache.inv_std[c];
                    const double mean = cache.mean[c];
                    const double shift = beta[c];
                    for (std::size_t p = 0; p < plane; ++p) {
                        out.data[off + p] = (x.data[off + p] - mean) * scale + shift;
                    }
                }
            }
            norms_[id] = std::move(cache);
            acts_[id] = std::move(out);
            break;
        }
        case NodeKind::kRelu: {
            Tensor out = in_act(0);
            for (auto& v : out.data) {
                v = v > 0.0 ? v : 0.0;
            }
            acts_[id] = std::move(out);
            break;
        }
        case NodeKind::kMask: {
            std::vector<double> scale(static_cast<std::size_t>(s.channels), 1.0);
            for (int c = 0; c < s.channels; ++c) {
                const int group = node.mask_groups[c];
                if (group == kSentinelGroup) {
                    continue;
                }
                if (group == kUnassignedGroup) {
                    throw ConfigError("mask node '" + node.name + "' has not been assigned groups");
                }
                if (group < 0 || static_cast<std::size_t>(group) >= mask_values.size()) {
                    throw ConfigError("missing mask value for group " + std::to_string(group) + " (mask node '" +
                                      node.name + "')");
                }
                scale[c] = mask_values[static_cast<std::size_t>(group)];
            }
            Tensor out = in_act(0);
            for (int n = 0; n < batch; ++n) {
                for (int c = 0; c < s.channels; ++c) {
                    double* p = out.ptr() + (static_cast<std::size_t>(n) * s.channels + c) * plane;
                    const double m = scale[c];
                    for (std::size_t k = 0; k < plane; ++k) {
                        p[k] *= m;
                    }
                }
            }
            mask_scale_[id] = std::move(scale);
            acts_[id] = std::move(out);
            break;
        }
        case NodeKind::kAvgPool: {
            const Shape& is = in_shape(0);
            const Tensor& x = in_act(0);
            Tensor out = activation_tensor(batch, s);
            for (int n = 0; n < batch; ++n) {
                for (int c = 0; c < s.channels; ++c) {
                    const double* ip = x.ptr() + (static_cast<std::size_t>(n) * is.channels + c) * is.spatial();
                    double* op = out.ptr() + (static_cast<std::size_t>(n) * s.channels + c) * plane;
                    for (int y = 0; y < s.height; ++y) {
                        for (int xx = 0; xx < s.width; ++xx) {
                            const double* a = ip + (2 * y) * is.width + 2 * xx;
                            op[y * s.width + xx] = 0.25 * (a[0] + a[1] + a[is.width] + a[is.width + 1]);
                        }
                    }
                }
            }
            acts_[id] = std::move(out);
            break;
        }
        case NodeKind::kGlobalPool: {
            const Shape& is = in_shape(0);
            const Tensor& x = in_act(0);
            Tensor out = activation_tensor(batch, s);
            const double inv = 1.0 / static_cast<double>(is.spatial());
            for (int n = 0; n < batch; ++n) {
                for (int c = 0; c < s.channels; ++c) {
                    const double* ip = x.ptr() + (static_cast<std::size_t>(n) * is.channels + c) * is.spatial();
                    double sum = 0.0;
                    for (int p = 0; p < is.spatial(); ++p) {
                        sum += ip[p];
                    }
                    out.data[static_cast<std::size_t>(n) * s.channels + c] = sum * inv;
                }
            }
            acts_[id] = std::move(out);
            break;
        }
        case NodeKind::kAdd: {
            Tensor out = in_act(0);
            for (std::size_t k = 1; k < node.inputs.size(); ++k) {
                const Tensor& other = in_act(k);
                for (std::size_t i = 0; i < out.size(); ++i) {
                    out.data[i] += other.data[i];
                }
            }
            acts_[id] = std::move(out);
            break;
        }
        case NodeKind::kConcat: {
            Tensor out = activation_tensor(batch, s);
            for (int n = 0; n < batch; ++n) {
                std::size_t offset = static_cast<std::size_t>(n) * s.size();
                for (std::size_t k = 0; k < node.inputs.size(); ++k) {
                    const std::size_t chunk = static_cast<std::size_t>(in_shape(k).size());
                    const double* src = in_act(k).ptr() + n * chunk;
                    std::copy(src, src + chunk, out.ptr() + offset);
                    offset += chunk;
                }
            }
            acts_[id] = std::move(out);
            break;
        }
        case NodeKind::kSoftmaxXent: {
            const int classes = in_shape(0).channels;
            const Tensor& z = in_act(0);
            probs_.assign(static_cast<std::size_t>(batch) * classes, 0.0);
            double total = 0.0;
            for (int n = 0; n < batch; ++n) {
                const double* zr = z.ptr() + static_cast<std::size_t>(n) * classes;
                double* pr = probs_.data() + static_cast<std::size_t>(n) * classes;
                const double zmax = *std::max_element(zr, zr + classes);
                double denom = 0.0;
                for (int k = 0; k < classes; ++k) {
                    pr[k] = std::exp(zr[k] - zmax);
                    denom += pr[k];
                }
                for (int k = 0; k < classes; ++k) {
                    pr[k] /= denom;
                }
                if (!labels.empty()) {
                    const int y = labels[n];
                    if (y < 0 || y >= classes) {
                        throw ConfigError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) +
                                          ")");
                    }
                    total += -(zr[y] - zmax - std::log(denom));
                }
            }
            Tensor out({1, 1, 1, 1});
            if (!labels.empty()) {
                loss_ = total / static_cast<double>(batch);
                out.data[0] = loss_;
            }
            acts_[id] = std::move(out);
            break;
        }
        }
    }
    ready_ = mode == Mode::kTrain && !labels.empty() && g.loss_id().has_value();
    return loss_;
}

Gradients Executor::backward() const
{
    if (!ready_) {
        throw StateError("backward requires a train-mode forward pass with labels");
    }
    const NetworkGraph& g = *graph_;
    Gradients grads;
    grads.params.resize(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        for (const auto& p : g.node(static_cast<NodeId>(i)).params) {
            grads.params[i].emplace_back(p.value.size(), 0.0);
        }
    }
    grads.masks.assign(mask_group_count_, 0.0);

    std::vector<Tensor> grad_act(g.size());
    auto grad_of = [&](NodeId id) -> Tensor& {
        Tensor& t = grad_act[static_cast<std::size_t>(id)];
        if (t.empty()) {
            t = Tensor(acts_[static_cast<std::size_t>(id)].shape, 0.0);
        }
        return t;
    };

    const NodeId loss_node = *g.loss_id();
    const auto& order = g.topological_order();
    const int batch = acts_[static_cast<std::size_t>(g.input_id())].dim(0);

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const NodeId id = *it;
        const Node& node = g.node(id);
        const Shape& s = node.shape;
        const std::size_t plane = static_cast<std::size_t>(s.height) * s.width;

        if (node.kind == NodeKind::kSoftmaxXent) {
            if (id != loss_node) {
                continue;
            }
            const int classes = g.node(node.inputs[0]).shape.channels;
            Tensor& gz = grad_of(node.inputs[0]);
            const double inv = 1.0 / static_cast<double>(batch);
            for (int n = 0; n < batch; ++n) {
                for (int k = 0; k < classes; ++k) {
                    const std::size_t idx = static_cast<std::size_t>(n) * classes + k;
                    gz.data[idx] += (probs_[idx] - (labels_[n] == k ? 1.0 : 0.0)) * inv;
                }
            }
            continue;
        }

        const Tensor& gy = grad_act[static_cast<std::size_t>(id)];
        if (gy.empty()) {
            continue;
        }
        auto& pgrads = grads.params[static_cast<std::size_t>(id)];

        switch (node.kind) {
        case NodeKind::kInput:
        case NodeKind::kSoftmaxXent:
            break;
        case NodeKind::kConv: {
            const Shape& is = g.node(node.inputs[0]).shape;
            const Tensor& x = acts_[static_cast<std::size_t>(node.inputs[0])];
            Tensor& gx = grad_of(node.inputs[0]);
            const std::size_t wi = param_index(node, "weight");
            const double* w = node.params[wi].value.data();
            for (int n = 0; n < batch; ++n) {
                conv_backward(x.ptr() + static_cast<std::size_t>(n) * is.size(), is.channels, is.height, is.width, w,
                              s.channels, node.kernel, node.stride, gy.ptr() + static_cast<std::size_t>(n) * s.size(),
                              s.height, s.width, gx.ptr() + static_cast<std::size_t>(n) * is.size(),
                              pgrads[wi].data());
            }
            break;
        }
        case NodeKind::kDepthwiseConv: {
            const Shape& is = g.node(node.inputs[0]).shape;
            const Tensor& x = acts_[static_cast<std::size_t>(node.inputs[0])];
            Tensor& gx = grad_of(node.inputs[0]);
            const std::size_t wi = param_index(node, "weight");
            const double* w = node.params[wi].value.data();
            for (int n = 0; n < batch; ++n) {
                depthwise_backward(x.ptr() + static_cast<std::size_t>(n) * is.size(), is.channels, is.height, is.width,
                                   w, node.kernel, node.stride, gy.ptr() + static_cast<std::size_t>(n) * s.size(),
                                   s.height, s.width, gx.ptr() + static_cast<std::size_t>(n) * is.size(),
                                   pgrads[wi].data());
            }
            break;
        }
        case NodeKind::kDense: {
            const int in_c = g.node(node.inputs[0]).shape.channels;
            const Tensor& x = acts_[static_cast<std::size_t>(node.inputs[0])];
            Tensor& gx = grad_of(node.inputs[0]);
            const std::size_t wi = param_index(node, "weight");
            const std::size_t bi = param_index(node, "bias");
            const auto& w = node.params[wi].value;
            auto& gw = pgrads[wi];
            auto& gb = pgrads[bi];
            for (int n = 0; n < batch; ++n) {
                const double* xr = x.ptr() + static_cast<std::size_t>(n) * in_c;
                double* gxr = gx.ptr() + static_cast<std::size_t>(n) * in_c;
                const double* gyr = gy.ptr() + static_cast<std::size_t>(n) * s.channels;
                for (int o = 0; o < s.channels; ++o) {
                    const double go = gyr[o];
                    gb[o] += go;
                    double* gwr = gw.data() + static_cast<std::size_t>(o) * in_c;
                    const double* wr = w.data() + static_cast<std::size_t>(o) * in_c;
                    for (int i = 0; i < in_c; ++i) {
                        gwr[i] += go * xr[i];
                        gxr[i] += go * wr[i];
                    }
                }
            }
            break;
        }
        case NodeKind::kBatchNorm: {
            const Tensor& x = acts_[static_cast<std::size_t>(node.inputs[0])];
            Tensor& gx = grad_of(node.inputs[0]);
            const std::size_t gi = param_index(node, "gamma");
            const std::size_t bi = param_index(node, "beta");
            const auto& gamma = node.params[gi].value;
            const NormCache& cache = norms_[static_cast<std::size_t>(id)];
            const double count = static_cast<double>(batch) * static_cast<double>(plane);
            for (int c = 0; c < s.channels; ++c) {
                const double mean = cache.mean[c];
                const double inv = cache.inv_std[c];
                double sum_gy = 0.0;
                double sum_gy_xhat = 0.0;
                for (int n = 0; n < batch; ++n) {
                    const std::size_t off = (static_cast<std::size_t>(n) * s.channels + c) * plane;
                    for (std::size_t p = 0; p < plane; ++p) {
                        const double xhat = (x.data[off + p] - mean) * inv;
                        sum_gy += gy.data[off + p];
                        sum_gy_xhat += gy.data[off + p] * xhat;
                    }
                }
                pgrads[gi][c] += sum_gy_xhat;
                pgrads[bi][c] += sum_gy;
                const double scale = gamma[c] * inv;
                if (mode_ == Mode::kTrain) {
                    for (int n = 0; n < batch; ++n) {
                        const std::size_t off = (static_cast<std::size_t>(n) * s.channels + c) * plane;
                        for (std::size_t p = 0; p < plane; ++p) {
                            const double xhat = (x.data[off + p] - mean) * inv;
                            gx.data[off + p] +=
                                scale * (gy.data[off + p] - sum_gy / count - xhat * sum_gy_xhat / count);
                        }
                    }
                } else {
                    for (int n = 0; n < batch; ++n) {
                        const std::size_t off = (static_cast<std::size_t>(n) * s.channels + c) * plane;
                        for (std::size_t p = 0; p < plane; ++p) {
                            gx.data[off + p] += scale * gy.data[off + p];
                        }
                    }
                }
            }
            break;
        }
        case NodeKind::kRelu: {
            const Tensor& y = acts_[static_cast<std::size_t>(id)];
            Tensor& gx = grad_of(node.inputs[0]);
            for (std::size_t i = 0; i < gy.size(); ++i) {
                if (y.data[i] > 0.0) {
                    gx.data[i] += gy.data[i];
                }
            }
            break;
        }
        case NodeKind::kMask: {
            const Tensor& x = acts_[static_cast<std::size_t>(node.inputs[0])];
            Tensor& gx = grad_of(node.inputs[0]);
            const auto& scale = mask_scale_[static_cast<std::size_t>(id)];
            for (int c = 0; c < s.channels; ++c) {
                const int group = node.mask_groups[c];
                double dm = 0.0;
                for (int n = 0; n < batch; ++n) {
                    const std::size_t off = (static_cast<std::size_t>(n) * s.channels + c) * plane;
                    for (std::size_t p = 0; p < plane; ++p) {
                        gx.data[off + p] += gy.data[off + p] * scale[c];
                        dm += gy.data[off + p] * x.data[off + p];
                    }
                }
                if (group >= 0) {
                    grads.masks[static_cast<std::size_t>(group)] += dm;
                }
            }
            break;
        }
        case NodeKind::kAvgPool: {
            const Shape& is = g.node(node.inputs[0]).shape;
            Tensor& gx = grad_of(node.inputs[0]);
            for (int n = 0; n < batch; ++n) {
                for (int c = 0; c < s.channels; ++c) {
                    double* gp = gx.ptr() + (static_cast<std::size_t>(n) * is.channels + c) * is.spatial();
                    const double* gop = gy.ptr() + (static_cast<std::size_t>(n) * s.channels + c) * plane;
                    for (int y = 0; y < s.height; ++y) {
                        for (int xx = 0; xx < s.width; ++xx) {
                            const double v = 0.25 * gop[y * s.width + xx];
                            double* a = gp + (2 * y) * is.width + 2 * xx;
                            a[0] += v;
                            a[1] += v;
                            a[is.width] += v;
                            a[is.width + 1] += v;
                        }
                    }
                }
            }
            break;
        }
        case NodeKind::kGlobalPool: {
            const Shape& is = g.node(node.inputs[0]).shape;
            Tensor& gx = grad_of(node.inputs[0]);
            const double inv = 1.0 / static_cast<double>(is.spatial());
            for (int n = 0; n < batch; ++n) {
                for (int c = 0; c < s.channels; ++c) {
                    const double v = gy.data[static_cast<std::size_t>(n) * s.channels + c] * inv;
                    double* gp = gx.ptr() + (static_cast<std::size_t>(n) * is.channels + c) * is.spatial();
                    for (int p = 0; p < is.spatial(); ++p) {
                        gp[p] += v;
                    }
                }
            }
            break;
        }
        case NodeKind::kAdd: {
            for (NodeId in : node.inputs) {
                Tensor& gx = grad_of(in);
                for (std::size_t i = 0; i < gy.size(); ++i) {
                    gx.data[i] += gy.data[i];
                }
            }
            break;
        }
        case NodeKind::kConcat: {
            for (int n = 0; n < batch; ++n) {
                std::size_t offset = static_cast<std::size_t>(n) * s.size();
                for (NodeId in : node.inputs) {
                    const std::size_t chunk = static_cast<std::size_t>(g.node(in).shape.size());
                    Tensor& gx = grad_of(in);
                    double* dst = gx.ptr() + n * chunk;
                    for (std::size_t i = 0; i < chunk; ++i) {
                        dst[i] += gy.data[offset + i];
                    }
                    offset += chunk;
                }
            }
            break;
        }
        }
    }
    return grads;
}

const Tensor& Executor::activation(NodeId id) const
{
    const auto& t = acts_.at(static_cast<std::size_t>(id));
    if (t.shape.empty()) {
        throw StateError("no activation recorded for node '" + graph_->node(id).name + "'");
    }
    return t;
}

const Tensor& Executor::output() const
{
    return activation(graph_->output_id());
}

std::vector<int> Executor::predictions() const
{
    const Tensor& z = output();
    const int batch = z.dim(0);
    const int classes = z.dim(1) * z.dim(2) * z.dim(3);
    std::vector<int> out(static_cast<std::size_t>(batch));
    for (int n = 0; n < batch; ++n) {
        const double* zr = z.ptr() + static_cast<std::size_t>(n) * classes;
        out[n] = static_cast<int>(std::max_element(zr, zr + classes) - zr);
    }
    return out;
}

void Executor::update_running_stats(NetworkGraph& graph, double momentum) const
{
    if (&graph != graph_) {
        throw StateError("running statistics must be written back to the executor's own graph");
    }
    if (mode_ != Mode::kTrain || norms_.empty()) {
        throw StateError("running statistics need a train-mode forward pass");
    }
    const int batch = acts_[static_cast<std::size_t>(graph.input_id())].dim(0);
    for (NodeId id : graph.topological_order()) {
        Node& node = graph.node(id);
        if (node.kind != NodeKind::kBatchNorm) {
            continue;
        }
        const NormCache& cache = norms_[static_cast<std::size_t>(id)];
        const double count = static_cast<double>(batch) * node.shape.spatial();
        const double unbias = count > 1.0 ? count / (count - 1.0) : 1.0;
        for (auto& b : node.buffers) {
            for (int c = 0; c < node.shape.channels; ++c) {
                const double batch_value = b.name == "running_mean" ? cache.mean[c] : cache.var[c] * unbias;
                b.value[c] = momentum * b.value[c] + (1.0 - momentum) * batch_value;
            }
        }
    }
}

double accuracy(std::span<const int> predicted, std::span<const int> labels)
{
    if (labels.empty()) {
        return 0.0;
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        hits += predicted[i] == labels[i] ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

} // namespace gatenas
