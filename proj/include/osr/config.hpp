#ifndef OSR_CONFIG_HPP
#define OSR_CONFIG_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace osr {

// Flat, human-editable experiment configuration. The on-disk form is one
// "key = value" pair per line; unknown keys are errors so hyperparameter
// typos cannot pass silently.
struct ExperimentConfig {
    // data
    std::string dataset = "mnist";
    std::string data_root = "data";
    std::string unknown_dataset = "split";  // "split" = the held-out classes
    int num_known = 6;
    std::string known_ids;  // explicit id list, e.g. "0 1 2"; overrides num_known
    // architectures
    std::string backbone = "plain";
    std::string generator_arch = "paper";
    std::string discriminator_arch = "paper";
    int synthetic_unknowns = 10;
    int noise_dim = 100;
    // training hyperparameters
    double tau = 5.0;
    double alpha = 0.5;
    double lambda_quantile = 0.01;
    double eps_quantile = 0.10;
    int batch_size = 128;
    double lr = 0.002;
    double adam_beta1 = 0.5;
    double adam_beta2 = 0.999;
    double eps_scale = 1e-3;
    int teacher_epochs = 3;
    long steps = 2000;
    // inference / evaluation
    double delta = 0.5;
    std::string variant = "TRS";
    // bookkeeping
    std::string out_dir = "out";
    std::uint64_t seed = 0;
    long grid_every = 0;  // emit a sample grid every N steps (0 = end only)

    static ExperimentConfig from_text(const std::string& text);
    static ExperimentConfig load(const std::string& path);
    void save(const std::string& path) const;

    // "--set key=value" override; throws std::invalid_argument on unknown
    // keys or unparsable values.
    void set_field(const std::string& key, const std::string& value);

    // Canonical echo; from_text(echo()) reproduces the config exactly.
    std::string echo() const;
    // 16 hex digits hashed over the canonical echo.
    std::string fingerprint() const;

    // Every violated field with an explanation; empty when valid.
    std::vector<std::string> validate() const;
    // Throws std::invalid_argument listing all violations.
    void require_valid() const;

    std::vector<int> known_id_list() const;
};

}  // namespace osr

#endif
