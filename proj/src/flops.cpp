#include "dgcn/flops.hpp"

#include <array>
#include <cstdio>
#include <limits>
#include <sstream>

#include "dgcn/skeleton.hpp"

namespace dgcn {

FlopCount count_conv_flops(const Shape& in_shape, const Shape& kernel_shape, std::size_t stride, std::size_t pad) {
    if (in_shape.size() != 3 && in_shape.size() != 4)
        throw DimensionError("count_conv_flops: input must be [C,T,N] or [B,C,T,N], got " + to_string(in_shape));
    if (kernel_shape.size() != 4) throw DimensionError("count_conv_flops: kernel must be [Co,C,kt,kn]");
    std::size_t off = in_shape.size() - 3;
    std::size_t c = in_shape[off], t = in_shape[off + 1], n = in_shape[off + 2];
    std::size_t co = kernel_shape[0], kt = kernel_shape[2], kn = kernel_shape[3];
    if (kernel_shape[1] != c)
        throw DimensionError("count_conv_flops: kernel " + to_string(kernel_shape) + " does not take " +
                             std::to_string(c) + " channels");
    if (stride == 0) throw ValidationError("count_conv_flops: stride must be >= 1");
    if (kt > t + 2 * pad || kn > n || kt == 0 || kn == 0)
        throw DimensionError("count_conv_flops: kernel " + to_string(kernel_shape) + " does not fit input " +
                             to_string(in_shape));
    FlopCount t_out = (t + 2 * pad - kt) / stride + 1, n_out = n - kn + 1;
    return 2ull * c * co * kt * kn * t_out * n_out;
}

FlopCount count_graph_mult_flops(std::size_t n, std::size_t c, std::size_t t, std::size_t matrices) {
    return 2ull * n * n * c * t * matrices;
}

namespace {

// Mirrors the CeN stage walk: each stage convolves the squeezed axis at every
// position of the other two.
FlopCount cen_flops(LearnerVariant v, std::size_t c, std::size_t t, std::size_t n, FlopCount& minor) {
    std::array<std::size_t, 3> order = v == LearnerVariant::cen_feature    ? std::array<std::size_t, 3>{1, 2, 0}
                                       : v == LearnerVariant::cen_temporal ? std::array<std::size_t, 3>{0, 2, 1}
                                                                           : std::array<std::size_t, 3>{0, 1, 2};
    std::array<std::size_t, 3> size{c, t, n};
    FlopCount total = 0;
    for (std::size_t s = 0; s < 3; ++s) {
        std::size_t axis = order[s];
        std::size_t positions = size[0] * size[1] * size[2] / size[axis];
        std::size_t out = s < 2 ? 1 : n * n;
        total += 2ull * size[axis] * out * positions;
        minor += 2ull * out * positions;  // BN + ReLU
        if (s < 2) size[axis] = 1;
    }
    minor += n * n;  // row normalization
    if (v == LearnerVariant::cen_symmetric) minor += n * n;
    return total;
}

FlopCount learner_flops(LearnerVariant v, std::size_t c, std::size_t t, std::size_t n, FlopCount& minor) {
    if (v == LearnerVariant::nonlocal) {
        std::size_t ce = std::max<std::size_t>(c / 4, 4);
        minor += 2ull * ce * t * n + n * n;  // temporal means, softmax
        return 2 * count_conv_flops({c, t, n}, {ce, c, 1, 1}) + 2ull * n * n * ce;
    }
    return cen_flops(v, c, t, n, minor);
}

std::string shape_text(const Shape& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
    return out;
}

std::string with_commas(FlopCount v) {
    auto s = std::to_string(v);
    for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
    return s;
}

}  // namespace

FlopCount CostReport::total() const {
    FlopCount t = 0;
    for (const auto& l : layers) t += l.flops();
    return t;
}

FlopCount CostReport::minor_total() const {
    FlopCount t = 0;
    for (const auto& l : layers) t += l.minor;
    return t;
}

CostReport count_model_flops(const ModelConfig& config, bool include_cen, const std::string& label) {
    auto layout = build_layout(config.layout);
    auto plans = plan_layers(config, layout.n_joints);
    CostReport report;
    report.label = label;
    report.include_cen = include_cen;
    report.persons = config.persons;
    const std::size_t k = 3;
    for (const auto& p : plans) {
        LayerCost lc;
        lc.name = "layer" + std::to_string(p.index + 1);
        lc.input = {p.c_in, p.t_in, p.n_in};
        lc.output = {p.c_out, p.t_out, p.n_out};
        const FlopCount pre = FlopCount(p.c_out) * p.t_in * p.n_in;
        const FlopCount post = FlopCount(p.c_out) * p.t_out * p.n_in;
        if (config.lambda_static > 0) {
            lc.static_branch = count_conv_flops({p.c_in, p.t_in, p.n_in}, {k * p.c_out, p.c_in, 1, 1}) +
                               count_graph_mult_flops(p.n_in, p.c_out, p.t_in, k);
        }
        if (include_cen && config.learner != LearnerVariant::none) {
            lc.dynamic_branch = learner_flops(config.learner, p.c_in, p.t_in, p.n_in, lc.minor) +
                                count_conv_flops({p.c_in, p.t_in, p.n_in}, {p.c_out, p.c_in, 1, 1}) +
                                count_graph_mult_flops(p.n_in, p.c_out, p.t_in, 1);
        }
        lc.temporal = count_conv_flops({p.c_out, p.t_in, p.n_in}, {p.c_out, p.c_out, config.tc_kernel, 1}, p.stride,
                                       (config.tc_kernel - 1) / 2);
        lc.minor += 2 * pre + 2 * post;  // fused BN+ReLU, temporal BN, residual add, ReLU
        if (p.shortcut_conv()) {
            lc.shortcut = count_conv_flops({p.c_in, p.t_in, p.n_in}, {p.c_out, p.c_in, 1, 1}, p.stride, 0);
            lc.minor += post;
        }
        if (p.projection()) lc.projection = 2ull * p.n_in * p.n_out * p.c_out * p.t_out;
        report.layers.push_back(lc);
    }
    LayerCost fc;
    fc.name = "classifier";
    const auto& last = plans.back();
    fc.input = {last.c_out};
    fc.output = {config.n_classes};
    fc.classifier = 2ull * last.c_out * config.n_classes;
    fc.minor = FlopCount(last.c_out) * last.t_out * last.n_out;  // global pooling
    report.layers.push_back(fc);
    return report;
}

OverheadReport overhead_report(const CostReport& base, const CostReport& other) {
    if (base.layers.size() != other.layers.size())
        throw ValidationError("overhead_report: reports have different layer counts");
    auto ratio = [](FlopCount a, FlopCount b) {
        if (a == 0) return b == 0 ? 0.0 : std::numeric_limits<double>::infinity();
        return (double(b) - double(a)) / double(a);
    };
    OverheadReport out;
    for (std::size_t i = 0; i < base.layers.size(); ++i) {
        const auto& a = base.layers[i];
        const auto& b = other.layers[i];
        if (a.name != b.name)
            throw ValidationError("overhead_report: layer '" + a.name + "' vs '" + b.name + "'");
        out.rows.push_back({a.name, a.flops(), b.flops(), ratio(a.flops(), b.flops())});
    }
    out.base_total = base.total();
    out.other_total = other.total();
    out.ratio = ratio(out.base_total, out.other_total);
    return out;
}

std::string format_report(const CostReport& report) {
    std::ostringstream os;
    char line[256];
    os << "FLOPs report" << (report.label.empty() ? "" : " (" + report.label + ")")
       << (report.include_cen ? ", with CeN" : ", without CeN") << "; 2 x multiply-adds per body\n";
    std::snprintf(line, sizeof line, "%-11s %-14s %-14s %16s %16s %16s %16s\n", "layer", "input", "output", "static",
                  "dynamic", "other", "total");
    os << line;
    for (const auto& l : report.layers) {
        FlopCount other = l.temporal + l.shortcut + l.projection + l.classifier;
        std::snprintf(line, sizeof line, "%-11s %-14s %-14s %16s %16s %16s %16s\n", l.name.c_str(),
                      shape_text(l.input).c_str(), shape_text(l.output).c_str(), with_commas(l.static_branch).c_str(),
                      with_commas(l.dynamic_branch).c_str(), with_commas(other).c_str(), with_commas(l.flops()).c_str());
        os << line;
    }
    std::snprintf(line, sizeof line, "total per body:     %s (%.3f G)\n", with_commas(report.total()).c_str(),
                  double(report.total()) / 1e9);
    os << line;
    std::snprintf(line, sizeof line, "total x%zu persons:   %s (%.3f G)\n", report.persons,
                  with_commas(report.total_all_persons()).c_str(), double(report.total_all_persons()) / 1e9);
    os << line;
    os << "minor ops (elements): " << with_commas(report.minor_total()) << " (not in totals)\n";
    return os.str();
}

std::string format_overhead(const OverheadReport& report) {
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof line, "%-11s %16s %16s %9s\n", "layer", "base", "other", "ratio");
    os << line;
    for (const auto& r : report.rows) {
        std::snprintf(line, sizeof line, "%-11s %16s %16s %8.2f%%\n", r.name.c_str(), with_commas(r.base).c_str(),
                      with_commas(r.other).c_str(), 100 * r.ratio);
        os << line;
    }
    std::snprintf(line, sizeof line, "%-11s %16s %16s %8.2f%%\n", "total", with_commas(report.base_total).c_str(),
                  with_commas(report.other_total).c_str(), 100 * report.ratio);
    os << line;
    return os.str();
}

nlohmann::json report_to_json(const CostReport& report) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : report.layers) {
        layers.push_back({{"name", l.name},
                          {"input", l.input},
                          {"output", l.output},
                          {"flops", l.flops()},
                          {"static", l.static_branch},
                          {"dynamic", l.dynamic_branch},
                          {"temporal", l.temporal},
                          {"shortcut", l.shortcut},
                          {"projection", l.projection},
                          {"classifier", l.classifier},
                          {"minor", l.minor}});
    }
    return {{"label", report.label},
            {"include_cen", report.include_cen},
            {"convention", "2*MAC per body"},
            {"persons", report.persons},
            {"total_flops", report.total()},
            {"total_flops_all_persons", report.total_all_persons()},
            {"minor_ops", report.minor_total()},
            {"layers", layers}};
}

nlohmann::json overhead_to_json(const OverheadReport& report) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : report.rows)
        rows.push_back({{"name", r.name}, {"base", r.base}, {"other", r.other}, {"ratio", r.ratio}});
    return {{"base_total", report.base_total},
            {"other_total", report.other_total},
            {"ratio", report.ratio},
            {"layers", rows}};
}

}  // namespace dgcn
