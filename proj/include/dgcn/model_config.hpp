#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "dgcn/topology_learners.hpp"

namespace dgcn {

/// Architecture of a Dynamic GCN. Layer indices in `aggregate_after` are
/// 1-based: {5, 8} inserts a joint projection after the 5th and 8th layers.
struct ModelConfig {
    std::string layout = "ntu25";
    std::size_t in_channels = 3;
    std::size_t frames = 64;
    std::vector<std::size_t> channels{64, 64, 64, 64, 128, 128, 128, 256, 256, 256};
    std::vector<std::size_t> strides{1, 1, 1, 1, 2, 1, 1, 2, 1, 1};
    std::size_t tc_kernel = 9;
    double lambda_static = 1.0;
    double alpha_agg = 0.6;
    std::vector<std::size_t> aggregate_after{5, 8};
    LearnerVariant learner = LearnerVariant::cen;
    bool cen_final_relu = true;
    bool learnable_projection = true;
    double alpha_degree = 0.001;
    std::size_t n_classes = 60;
    /// Bodies per sample; folded into the batch and averaged after pooling.
    std::size_t persons = 2;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

/// "ntu-like", "kinetics-like", "smoke", "synthetic" (the reduced 4-layer net), "toy".
ModelConfig model_preset(std::string_view name);

/// Static shape walk of one layer.
struct LayerPlan {
    std::size_t index = 0;  // 0-based
    std::size_t c_in = 0, c_out = 0;
    std::size_t stride = 1;
    std::size_t t_in = 0, t_out = 0;
    std::size_t n_in = 0, n_out = 0;  // n_out != n_in iff a projection follows
    bool physical_topology = true;    // false once joints have been aggregated
    bool projection() const { return n_out != n_in; }
    bool shortcut_conv() const { return c_in != c_out || stride != 1; }
};

/// round(alpha * n), at least 1.
std::size_t aggregated_joints(std::size_t n, double alpha);

std::vector<LayerPlan> plan_layers(const ModelConfig& config, std::size_t n_joints);

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace dgcn
