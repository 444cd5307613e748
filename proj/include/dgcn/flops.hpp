#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "dgcn/model_config.hpp"

namespace dgcn {

using FlopCount = std::uint64_t;

/// 2 * C_in * C_out * kt * kn * T_out * N_out for one sample. `in_shape` is
/// [C,T,N] or [B,C,T,N] (batch ignored); kernel is [C_out,C_in,kt,kn].
FlopCount count_conv_flops(const Shape& in_shape, const Shape& kernel_shape, std::size_t stride = 1,
                           std::size_t pad = 0);

/// 2 * N^2 * C * T per adjacency matrix applied.
FlopCount count_graph_mult_flops(std::size_t n, std::size_t c, std::size_t t, std::size_t matrices = 1);

/// Cost of one GConv layer (or the classifier), split by component.
struct LayerCost {
    std::string name;
    Shape input, output;  // per sample, [C,T,N] (classifier: [C] -> [classes])
    FlopCount static_branch = 0;
    FlopCount dynamic_branch = 0;  // learner + W' + per-sample graph product
    FlopCount temporal = 0;
    FlopCount shortcut = 0;
    FlopCount projection = 0;
    FlopCount classifier = 0;
    /// Elements touched by batch norm, ReLU, residual adds, pooling, and
    /// row normalization. Reported, never added to `flops()`.
    FlopCount minor = 0;

    FlopCount flops() const {
        return static_branch + dynamic_branch + temporal + shortcut + projection + classifier;
    }
};

struct CostReport {
    std::string label;
    bool include_cen = true;
    std::size_t persons = 1;
    std::vector<LayerCost> layers;

    /// One body.
    FlopCount total() const;
    /// All `persons` bodies of one sample.
    FlopCount total_all_persons() const { return total() * persons; }
    FlopCount minor_total() const;
};

/// Walks the layer schedule of `config`. With include_cen false the dynamic
/// branch contributes nothing, as if the model had only its static topology.
CostReport count_model_flops(const ModelConfig& config, bool include_cen, const std::string& label = "");

struct OverheadRow {
    std::string name;
    FlopCount base = 0, other = 0;
    double ratio = 0;  // (other - base) / base, 0 when both are 0
};

struct OverheadReport {
    std::vector<OverheadRow> rows;
    FlopCount base_total = 0, other_total = 0;
    double ratio = 0;
};

/// Per-layer and total relative increase of `other` over `base`. Throws
/// ValidationError when the layer names differ.
OverheadReport overhead_report(const CostReport& base, const CostReport& other);

std::string format_report(const CostReport& report);
std::string format_overhead(const OverheadReport& report);
nlohmann::json report_to_json(const CostReport& report);
nlohmann::json overhead_to_json(const OverheadReport& report);

}  // namespace dgcn
