#include "dgcn/model_config.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace dgcn {

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ValidationError("model config: " + msg); };
    if (in_channels == 0) fail("in_channels must be >= 1");
    if (frames == 0) fail("frames must be >= 1");
    if (channels.empty()) fail("need at least one layer");
    if (strides.size() != channels.size()) fail("strides and channels differ in length");
    for (auto c : channels)
        if (c == 0) fail("zero channel width");
    for (auto s : strides)
        if (s == 0) fail("stride must be >= 1");
    if (tc_kernel % 2 == 0) fail("tc_kernel must be odd");
    if (!(lambda_static >= 0)) fail("lambda_static must be >= 0");
    if (lambda_static == 0 && learner == LearnerVariant::none) fail("lambda_static 0 with learner none leaves no branch");
    if (!(alpha_agg > 0 && alpha_agg <= 1)) fail("alpha_agg must lie in (0, 1]");
    std::set<std::size_t> seen;
    for (auto p : aggregate_after) {
        if (p < 1 || p > channels.size()) fail("aggregation position " + std::to_string(p) + " is not a layer index");
        if (!seen.insert(p).second) fail("duplicate aggregation position " + std::to_string(p));
    }
    if (!(alpha_degree > 0)) fail("alpha_degree must be positive");
    if (n_classes == 0) fail("n_classes must be >= 1");
    if (persons == 0) fail("persons must be >= 1");
}

ModelConfig model_preset(std::string_view name) {
    ModelConfig c;
    if (name == "ntu-like") return c;
    if (name == "kinetics-like") {
        c.layout = "openpose18";
        c.frames = 150;
        c.n_classes = 400;
        return c;
    }
    if (name == "smoke") {
        c.frames = 16;
        c.channels = {16, 16};
        c.strides = {1, 1};
        c.aggregate_after = {};
        c.n_classes = 2;
        c.persons = 1;
        return c;
    }
    if (name == "synthetic") {
        c.frames = 16;
        c.channels = {16, 16, 32, 32};
        c.strides = {1, 1, 2, 1};
        c.aggregate_after = {};
        c.n_classes = 5;
        c.persons = 1;
        return c;
    }
    if (name == "toy") {
        c.layout = "chain3";
        c.frames = 4;
        c.channels = {4};
        c.strides = {1};
        c.aggregate_after = {};
        c.n_classes = 2;
        c.persons = 1;
        return c;
    }
    throw ValidationError("unknown model preset '" + std::string(name) +
                          "' (ntu-like, kinetics-like, smoke, synthetic, toy)");
}

std::size_t aggregated_joints(std::size_t n, double alpha) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(alpha * double(n))));
}

std::vector<LayerPlan> plan_layers(const ModelConfig& config, std::size_t n_joints) {
    config.validate();
    std::vector<LayerPlan> plans;
    std::size_t c = config.in_channels, t = config.frames, n = n_joints;
    bool physical = true;
    for (std::size_t i = 0; i < config.channels.size(); ++i) {
        LayerPlan p;
        p.index = i;
        p.c_in = c;
        p.c_out = config.channels[i];
        p.stride = config.strides[i];
        p.t_in = t;
        p.t_out = (t + p.stride - 1) / p.stride;
        p.n_in = n;
        bool agg = std::find(config.aggregate_after.begin(), config.aggregate_after.end(), i + 1) !=
                   config.aggregate_after.end();
        p.n_out = agg ? aggregated_joints(n, config.alpha_agg) : n;
        p.physical_topology = physical;
        plans.push_back(p);
        c = p.c_out;
        t = p.t_out;
        if (agg) physical = false;
        n = p.n_out;
    }
    return plans;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"layout", c.layout},
                       {"in_channels", c.in_channels},
                       {"frames", c.frames},
                       {"channels", c.channels},
                       {"strides", c.strides},
                       {"tc_kernel", c.tc_kernel},
                       {"lambda_static", c.lambda_static},
                       {"alpha_agg", c.alpha_agg},
                       {"aggregate_after", c.aggregate_after},
                       {"learner", to_string(c.learner)},
                       {"cen_final_relu", c.cen_final_relu},
                       {"learnable_projection", c.learnable_projection},
                       {"alpha_degree", c.alpha_degree},
                       {"n_classes", c.n_classes},
                       {"persons", c.persons}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    if (!j.is_object()) throw ParseError("model config must be a JSON object");
    static const std::set<std::string> known{"layout", "in_channels", "frames", "channels", "strides",
                                             "tc_kernel", "lambda_static", "alpha_agg", "aggregate_after",
                                             "learner", "cen_final_relu", "learnable_projection",
                                             "alpha_degree", "n_classes", "persons"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key())) throw ParseError("model config: unknown key '" + it.key() + "'");
    try {
        auto get = [&](const char* key, auto& field) {
            if (j.contains(key)) j.at(key).get_to(field);
        };
        get("layout", c.layout);
        get("in_channels", c.in_channels);
        get("frames", c.frames);
        get("channels", c.channels);
        get("strides", c.strides);
        get("tc_kernel", c.tc_kernel);
        get("lambda_static", c.lambda_static);
        get("alpha_agg", c.alpha_agg);
        get("aggregate_after", c.aggregate_after);
        if (j.contains("learner")) c.learner = parse_learner_variant(j.at("learner").get<std::string>());
        get("cen_final_relu", c.cen_final_relu);
        get("learnable_projection", c.learnable_projection);
        get("alpha_degree", c.alpha_degree);
        get("n_classes", c.n_classes);
        get("persons", c.persons);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("model config: ") + e.what());
    }
}

}  // namespace dgcn
