#include <fstream>

#include <nlohmann/json.hpp>

#include "steerlab/model.hpp"

namespace steerlab {

using nlohmann::json;

void save_model(const ModelParams& params, const std::filesystem::path& json_path,
                const std::filesystem::path& weights_path) {
    auto& self = const_cast<ModelParams&>(params);
    auto tensors = named_tensors(self);

    json doc;
    doc["config"] = {{"vocab_size", params.config.vocab_size},
                     {"d_model", params.config.d_model},
                     {"n_layers", params.config.n_layers},
                     {"n_heads", params.config.n_heads},
                     {"d_mlp", params.config.d_mlp},
                     {"max_context", params.config.max_context},
                     {"seed", params.config.seed}};
    doc["dtype"] = "float64";
    doc["order"] = "row-major within each tensor";

    std::ofstream bin(weights_path, std::ios::binary);
    if (!bin) throw IoError("cannot write " + weights_path.string());
    json sections = json::array();
    long offset = 0;  // in doubles
    for (const auto& t : tensors) {
        sections.push_back({{"name", t.name},
                            {"rows", t.value.rows()},
                            {"cols", t.value.cols()},
                            {"offset", offset}});
        for (long r = 0; r < t.value.rows(); ++r) {
            for (long c = 0; c < t.value.cols(); ++c) {
                double v = t.value(r, c);
                bin.write(reinterpret_cast<const char*>(&v), sizeof(double));
            }
        }
        offset += t.value.size();
    }
    doc["sections"] = std::move(sections);
    doc["total_parameters"] = offset;

    std::ofstream jf(json_path);
    if (!jf) throw IoError("cannot write " + json_path.string());
    jf << doc.dump(2) << "\n";
}

ModelParams load_model(const std::filesystem::path& json_path,
                       const std::filesystem::path& weights_path) {
    std::ifstream jf(json_path);
    if (!jf) throw IoError("cannot read " + json_path.string());
    json doc = json::parse(jf);

    ModelConfig config;
    const json& c = doc.at("config");
    config.vocab_size = c.at("vocab_size").get<int>();
    config.d_model = c.at("d_model").get<int>();
    config.n_layers = c.at("n_layers").get<int>();
    config.n_heads = c.at("n_heads").get<int>();
    config.d_mlp = c.at("d_mlp").get<int>();
    config.max_context = c.at("max_context").get<int>();
    config.seed = c.at("seed").get<std::uint64_t>();

    ModelParams params = ModelParams::zeros(config);
    auto tensors = named_tensors(params);
    const json& sections = doc.at("sections");
    if (sections.size() != tensors.size())
        throw IoError("model json: section count mismatch");

    std::ifstream bin(weights_path, std::ios::binary);
    if (!bin) throw IoError("cannot read " + weights_path.string());
    for (size_t i = 0; i < tensors.size(); ++i) {
        const json& s = sections[i];
        if (s.at("name").get<std::string>() != tensors[i].name ||
            s.at("rows").get<long>() != tensors[i].value.rows() ||
            s.at("cols").get<long>() != tensors[i].value.cols())
            throw IoError("model json: section " + tensors[i].name + " does not match config");
        for (long r = 0; r < tensors[i].value.rows(); ++r) {
            for (long c2 = 0; c2 < tensors[i].value.cols(); ++c2) {
                double v = 0.0;
                if (!bin.read(reinterpret_cast<char*>(&v), sizeof(double)))
                    throw IoError("weights blob truncated: " + weights_path.string());
                tensors[i].value(r, c2) = v;
            }
        }
    }
    if (!params.all_finite()) throw NumericError("loaded model has non-finite weights");
    return params;
}

}  // namespace steerlab
