#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctxgen/data.hpp"
#include "ctxgen/decode.hpp"
#include "ctxgen/optim.hpp"
#include "ctxgen/system.hpp"

namespace ctxgen {

enum class TrainMode { full, bias_only };

inline std::string to_string(TrainMode mode) {
    return mode == TrainMode::full ? "full" : "bias_only";
}

inline TrainMode train_mode_from_string(const std::string& s) {
    if (s == "full") {
        return TrainMode::full;
    }
    if (s == "bias_only") {
        return TrainMode::bias_only;
    }
    throw std::invalid_argument("unknown train mode: " + s);
}

struct TrainConfig {
    int epochs = 20;
    int batch_size = 8;
    // Unset picks the pilot-tuned default by mode: 3e-4 full, 1e-3 bias-only.
    std::optional<real> learning_rate;
    real beta1 = real(0.9);
    real beta2 = real(0.999);
    real epsilon = real(1e-8);
    TrainMode mode = TrainMode::full;
    std::uint64_t seed = 0;
    double validation_fraction = 0.0;
    real clip_norm = real(1.0);

    real effective_learning_rate() const {
        if (learning_rate) {
            return *learning_rate;
        }
        return mode == TrainMode::full ? real(3e-4) : real(1e-3);
    }

    void validate() const {
        if (epochs < 1 || batch_size < 1) {
            throw std::invalid_argument("TrainConfig: epochs and batch_size must be >= 1");
        }
        if (validation_fraction < 0.0 || validation_fraction >= 1.0) {
            throw std::invalid_argument("TrainConfig: validation_fraction must be in [0, 1)");
        }
        if (learning_rate && *learning_rate < real(0)) {
            throw std::invalid_argument("TrainConfig: learning_rate must be >= 0");
        }
    }
};

/// Exactly the parameters whose tensor is an additive bias or layer-norm shift.
inline std::vector<NamedParam> bias_only_filter(const std::vector<NamedParam>& params) {
    std::vector<NamedParam> out;
    for (const NamedParam& p : params) {
        if (p.is_bias) {
            out.push_back(p);
        }
    }
    return out;
}

/// Percentage of all parameters (both objectives) trained under `mode`.
inline double count_trainable_fraction(const System& system, TrainMode mode) {
    const std::vector<NamedParam> all = system.all_parameters();
    const std::int64_t total = parameter_count(all);
    const std::int64_t trainable =
        mode == TrainMode::full ? total : parameter_count(bias_only_filter(all));
    return 100.0 * static_cast<double>(trainable) / static_cast<double>(total);
}

struct TrainState {
    int epoch = 0;
    double best_validation_loss = std::numeric_limits<double>::infinity();
    AdamState adam_forward;
    AdamState adam_inverse;
};

struct EpochStats {
    double loss_forward = 0.0;  // mean per-token
    double loss_inverse = 0.0;  // mean per-example of the summed reconstruction loss
};

/// Joint training loop: both objectives run on every batch, each updating
/// only its own parameter set.
class Trainer {
public:
    Trainer(System& system, const TrainConfig& cfg) : system_(system), cfg_(cfg) {
        cfg.validate();
        forward_named_ = system.forward_parameters();
        inverse_named_ = system.inverse_parameters();
        if (cfg.mode == TrainMode::bias_only) {
            forward_trainable_ = tensors_(bias_only_filter(forward_named_));
            inverse_trainable_ = tensors_(bias_only_filter(inverse_named_));
        } else {
            forward_trainable_ = tensors_(forward_named_);
            inverse_trainable_ = tensors_(inverse_named_);
        }
        const real lr = cfg.effective_learning_rate();
        state_.adam_forward = AdamState::init(forward_trainable_, lr, cfg.beta1,
                                              cfg.beta2, cfg.epsilon);
        state_.adam_inverse = AdamState::init(inverse_trainable_, lr, cfg.beta1,
                                              cfg.beta2, cfg.epsilon);
    }

    const TrainState& state() const { return state_; }
    System& system() { return system_; }

    /// Generation loss over a batch, one Adam step on the forward set.
    /// Returns the mean per-token loss.
    double train_step_forward(const Batch& batch) {
        double loss = batch_forward_loss_(batch, /*with_grad=*/true);
        clip_grad_norm(forward_trainable_, static_cast<double>(cfg_.clip_norm));
        adam_step(forward_trainable_, state_.adam_forward);
        zero_(forward_trainable_);
        return loss;
    }

    /// Reconstruction loss over a batch, one Adam step on the inverse set.
    /// Returns the mean per-example loss.
    double train_step_inverse(const Batch& batch) {
        double loss = batch_inverse_loss_(batch, /*with_grad=*/true);
        clip_grad_norm(inverse_trainable_, static_cast<double>(cfg_.clip_norm));
        adam_step(inverse_trainable_, state_.adam_inverse);
        zero_(inverse_trainable_);
        return loss;
    }

    double eval_forward(const std::vector<Example>& examples) {
        if (examples.empty()) {
            return 0.0;
        }
        double total = 0.0;
        for (const auto& batch : make_batches(examples, cfg_.batch_size)) {
            total += batch_forward_loss_(batch, /*with_grad=*/false) *
                     static_cast<double>(batch.examples.size());
        }
        return total / static_cast<double>(examples.size());
    }

    double eval_inverse(const std::vector<Example>& examples) {
        if (examples.empty()) {
            return 0.0;
        }
        double total = 0.0;
        for (const auto& batch : make_batches(examples, cfg_.batch_size)) {
            total += batch_inverse_loss_(batch, /*with_grad=*/false) *
                     static_cast<double>(batch.examples.size());
        }
        return total / static_cast<double>(examples.size());
    }

    /// Trains for cfg.epochs, writing one line-delimited record per epoch and
    /// split. With a validation split, the parameters from the best epoch
    /// (lowest validation loss_forward + loss_inverse) are restored at the end.
    void fit(const std::vector<Example>& corpus, std::ostream* log = nullptr) {
        if (corpus.empty()) {
            throw std::invalid_argument("Trainer::fit: empty corpus");
        }
        Rng rng(cfg_.seed);
        std::vector<Example> shuffled = corpus;
        rng.shuffle(shuffled);
        const auto n_val = static_cast<std::size_t>(
            cfg_.validation_fraction * static_cast<double>(shuffled.size()));
        std::vector<Example> val(shuffled.begin(), shuffled.begin() + n_val);
        std::vector<Example> train(shuffled.begin() + n_val, shuffled.end());
        if (train.empty()) {
            throw std::invalid_argument("Trainer::fit: validation split leaves no training data");
        }

        const double trainable_pct = count_trainable_fraction(system_, cfg_.mode);
        std::vector<std::vector<real>> best_snapshot;
        for (int epoch = 1; epoch <= cfg_.epochs; ++epoch) {
            state_.epoch = epoch;
            rng.shuffle(train);
            double fwd_sum = 0.0, inv_sum = 0.0;
            std::size_t n_batches = 0;
            for (const auto& batch : make_batches(train, cfg_.batch_size)) {
                fwd_sum += train_step_forward(batch);
                inv_sum += train_step_inverse(batch);
                ++n_batches;
            }
            EpochStats train_stats{fwd_sum / static_cast<double>(n_batches),
                                   inv_sum / static_cast<double>(n_batches)};
            log_record_(log, epoch, "train", train_stats, trainable_pct);
            if (!val.empty()) {
                EpochStats val_stats{eval_forward(val), eval_inverse(val)};
                log_record_(log, epoch, "validation", val_stats, trainable_pct);
                const double score = val_stats.loss_forward + val_stats.loss_inverse;
                if (score < state_.best_validation_loss) {
                    state_.best_validation_loss = score;
                    best_snapshot = snapshot_();
                }
            }
        }
        if (!best_snapshot.empty()) {
            restore_(best_snapshot);
        }
    }

private:
    static std::vector<Tensor> tensors_(const std::vector<NamedParam>& named) {
        std::vector<Tensor> out;
        out.reserve(named.size());
        for (const NamedParam& p : named) {
            out.push_back(p.tensor);
        }
        return out;
    }

    static void zero_(std::vector<Tensor>& params) {
        for (Tensor& p : params) {
            p.zero_grad();
        }
    }

    double batch_forward_loss_(const Batch& batch, bool with_grad) {
        if (batch.examples.empty()) {
            throw std::invalid_argument("train_step_forward: empty batch");
        }
        Tensor total;
        std::int64_t positions = 0;
        bool first = true;
        for (std::size_t i = 0; i < batch.examples.size(); ++i) {
            const Example& ex = batch.examples[i];
            const Tensor source = system_.generator_source(ex.input_ids);
            const std::vector<int> target = batch.target_row(i);
            const SeqForward fw =
                system_.generator->forward(source, target, Vocab::kBos, Vocab::kEos);
            const Tensor summed = scale(fw.loss, static_cast<real>(fw.n_positions));
            positions += fw.n_positions;
            total = first ? summed : add(total, summed);
            first = false;
        }
        const Tensor mean_loss = scale(total, real(1) / static_cast<real>(positions));
        if (with_grad) {
            mean_loss.backward();
        }
        return static_cast<double>(mean_loss.item());
    }

    double batch_inverse_loss_(const Batch& batch, bool with_grad) {
        if (batch.examples.empty()) {
            throw std::invalid_argument("train_step_inverse: empty batch");
        }
        Tensor total;
        bool first = true;
        for (const Example& ex : batch.examples) {
            const Tensor li =
                inverse_loss(*system_.inverse_model, system_.inverse_prompts,
                             ex.input_ids, ex.output_sentences, Vocab::kBos, Vocab::kEos);
            total = first ? li : add(total, li);
            first = false;
        }
        const Tensor mean_loss =
            scale(total, real(1) / static_cast<real>(batch.examples.size()));
        if (with_grad) {
            mean_loss.backward();
        }
        return static_cast<double>(mean_loss.item());
    }

    void log_record_(std::ostream* log, int epoch, const char* split,
                     const EpochStats& stats, double trainable_pct) const {
        if (!log) {
            return;
        }
        nlohmann::json record;
        record["epoch"] = epoch;
        record["split"] = split;
        record["loss_forward"] = stats.loss_forward;
        record["loss_inverse"] = stats.loss_inverse;
        record["trainable_pct"] = trainable_pct;
        (*log) << record.dump() << '\n';
    }

    std::vector<std::vector<real>> snapshot_() const {
        std::vector<std::vector<real>> snap;
        for (const NamedParam& p : system_.all_parameters()) {
            snap.push_back(p.tensor.values());
        }
        return snap;
    }

    void restore_(const std::vector<std::vector<real>>& snap) {
        std::size_t i = 0;
        for (NamedParam& p : system_.all_parameters()) {
            p.tensor.values() = snap[i++];
        }
    }

    System& system_;
    TrainConfig cfg_;
    TrainState state_;
    std::vector<NamedParam> forward_named_;
    std::vector<NamedParam> inverse_named_;
    std::vector<Tensor> forward_trainable_;
    std::vector<Tensor> inverse_trainable_;
};

}  // namespace ctxgen
