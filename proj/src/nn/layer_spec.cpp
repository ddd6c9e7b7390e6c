#include "dynfg/nn/layer_spec.hpp"

#include <sstream>

#include "dynfg/ops.hpp"

namespace dynfg::nn {

LayerSpec LayerSpec::conv(LayerKind kind, Index in, Index out, Index kernel, Index stride, Index padding) {
    LayerSpec s;
    s.kind = kind;
    s.in_channels = in;
    s.out_channels = out;
    s.kernel = kernel;
    s.stride = stride;
    s.padding = padding;
    return s;
}

LayerSpec LayerSpec::max_pool(Index kernel, Index stride) {
    LayerSpec s;
    s.kind = LayerKind::MaxPool;
    s.kernel = kernel;
    s.stride = stride;
    return s;
}

LayerSpec LayerSpec::avg_pool(Index kernel, Index stride) {
    LayerSpec s;
    s.kind = LayerKind::AvgPool;
    s.kernel = kernel;
    s.stride = stride;
    return s;
}

LayerSpec LayerSpec::upsample(Index factor) {
    LayerSpec s;
    s.kind = LayerKind::Upsample;
    s.factor = factor;
    return s;
}

LayerSpec LayerSpec::linear(Index in, Index out, bool lrelu) {
    LayerSpec s;
    s.kind = lrelu ? LayerKind::LinearLReLU : LayerKind::Linear;
    s.in_channels = in;
    s.out_channels = out;
    return s;
}

bool LayerSpec::is_conv() const {
    return kind == LayerKind::Conv || kind == LayerKind::ConvReLU || kind == LayerKind::ConvBNReLU ||
           kind == LayerKind::ConvBNLReLU;
}

bool LayerSpec::is_linear() const { return kind == LayerKind::Linear || kind == LayerKind::LinearLReLU; }

bool LayerSpec::has_batchnorm() const { return kind == LayerKind::ConvBNReLU || kind == LayerKind::ConvBNLReLU; }

bool LayerSpec::has_activation() const {
    return kind == LayerKind::ConvReLU || kind == LayerKind::ConvBNReLU || kind == LayerKind::ConvBNLReLU ||
           kind == LayerKind::LinearLReLU;
}

const char* kind_name(LayerKind kind) {
    switch (kind) {
        case LayerKind::Conv: return "Conv";
        case LayerKind::ConvReLU: return "Conv+ReLU";
        case LayerKind::ConvBNReLU: return "Conv+BN+ReLU";
        case LayerKind::ConvBNLReLU: return "Conv+BN+LReLU";
        case LayerKind::MaxPool: return "MaxPool";
        case LayerKind::AvgPool: return "AvgPool";
        case LayerKind::Upsample: return "Upsample";
        case LayerKind::Linear: return "FC";
        case LayerKind::LinearLReLU: return "FC+LReLU";
    }
    return "?";
}

LayerKind parse_kind(const std::string& name) {
    for (LayerKind k : {LayerKind::Conv, LayerKind::ConvReLU, LayerKind::ConvBNReLU, LayerKind::ConvBNLReLU,
                        LayerKind::MaxPool, LayerKind::AvgPool, LayerKind::Upsample, LayerKind::Linear,
                        LayerKind::LinearLReLU}) {
        if (name == kind_name(k)) return k;
    }
    throw std::invalid_argument("unknown layer kind '" + name + "'");
}

std::string LayerSpec::describe() const {
    std::ostringstream os;
    os << kind_name(kind);
    if (is_conv() || kind == LayerKind::MaxPool || kind == LayerKind::AvgPool) {
        os << ' ' << kernel << 'x' << kernel << '/' << stride << '/' << padding;
    } else if (kind == LayerKind::Upsample) {
        os << " x" << factor;
    }
    if (is_conv() || is_linear()) os << ' ' << in_channels << "->" << out_channels;
    return os.str();
}

std::vector<Shape> infer_shapes(std::span<const LayerSpec> specs, const Shape& input) {
    std::vector<Shape> out;
    Shape cur = input;
    for (std::size_t row = 0; row < specs.size(); ++row) {
        const LayerSpec& s = specs[row];
        auto fail = [&](const std::string& why) {
            throw ShapeError("row " + std::to_string(row) + " (" + s.describe() + "): " + why + "; input " +
                             shape_str(cur));
        };
        if (s.is_linear()) {
            if (cur.size() < 2) fail("no batch axis");
            Index features = 1;
            for (std::size_t i = 1; i < cur.size(); ++i) features *= cur[i];
            if (features != s.in_channels) fail("expects " + std::to_string(s.in_channels) + " input features");
            cur = {cur[0], s.out_channels};
        } else {
            if (cur.size() != 4) fail("expects a [B,C,H,W] feature map");
            if (s.is_conv()) {
                if (cur[1] != s.in_channels) fail("expects " + std::to_string(s.in_channels) + " channels");
                if (s.kernel < 1 || s.stride < 1 || s.padding < 0) fail("bad kernel/stride/padding");
                if (s.kernel > cur[2] + 2 * s.padding || s.kernel > cur[3] + 2 * s.padding) fail("kernel too large");
                cur = {cur[0], s.out_channels, conv_out_extent(cur[2], s.kernel, s.stride, s.padding),
                       conv_out_extent(cur[3], s.kernel, s.stride, s.padding)};
            } else if (s.kind == LayerKind::MaxPool || s.kind == LayerKind::AvgPool) {
                if (s.kernel > cur[2] || s.kernel > cur[3]) fail("pool window larger than input");
                cur = {cur[0], cur[1], conv_out_extent(cur[2], s.kernel, s.stride, 0),
                       conv_out_extent(cur[3], s.kernel, s.stride, 0)};
            } else if (s.kind == LayerKind::Upsample) {
                if (s.factor < 1) fail("factor must be positive");
                cur = {cur[0], cur[1], cur[2] * s.factor, cur[3] * s.factor};
            }
        }
        out.push_back(cur);
    }
    return out;
}

std::string format_output_size(const Shape& shape) {
    if (shape.size() == 2) return std::to_string(shape[1]);
    if (shape.size() == 4) {
        if (shape[2] == 1 && shape[3] == 1) return std::to_string(shape[1]);
        return std::to_string(shape[2]) + "x" + std::to_string(shape[3]) + "x" + std::to_string(shape[1]);
    }
    return shape_str(shape);
}

}  // namespace dynfg::nn
