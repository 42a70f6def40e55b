// Training loop: Adam over shuffled mini-batches, per-epoch dev evaluation,
// best/last checkpointing and early stopping on the monitored loss (dev when
// a dev set exists, otherwise train). Fully deterministic for a fixed seed:
// the dropout stream, the per-epoch shuffles and the update order (parameter
// name order) are all pinned.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "signtrans/checkpoint.hpp"
#include "signtrans/corpus.hpp"
#include "signtrans/model.hpp"
#include "signtrans/rng.hpp"
#include "signtrans/tensor.hpp"

namespace signtrans {

struct EpochStats {
    int epoch = 0;         // 1-based
    int64_t steps = 0;     // cumulative optimizer steps
    double train_total = 0;
    double train_translation = 0;
    double train_aux = 0;
    bool has_dev = false;
    double dev_total = 0;
    double dev_translation = 0;
    double dev_aux = 0;
    bool improved = false;
};

struct TrainOptions {
    size_t batch_size = 32;
    int max_epochs = 100;
    int64_t max_steps = 0;  // 0 = no step cap
    double learning_rate = 1e-4;
    int patience = 5;       // epochs without improvement before stopping
    uint64_t seed = 1;
    std::string checkpoint_dir;  // empty = keep checkpoints in memory only
    nlohmann::json checkpoint_extra = nlohmann::json::object();
    std::function<void(const EpochStats&)> on_epoch;
};

struct TrainResult {
    std::vector<EpochStats> epochs;
    int64_t steps = 0;
    int best_epoch = 0;
    double best_loss = 0;
    bool stopped_early = false;
    ParamMap<float> best_params;
};

inline TrainResult train(Transformer<float>& model, const std::vector<EncodedSample>& train_set,
                         const std::vector<EncodedSample>& dev_set, const TrainOptions& opts,
                         const Vocabulary* src_vocab = nullptr,
                         const ExternalTables* tables = nullptr) {
    if (train_set.empty()) throw ValidationError("train: empty training set");
    if (opts.max_epochs < 1) throw ValidationError("train: max_epochs must be >= 1");
    if (opts.patience < 1) throw ValidationError("train: patience must be >= 1");
    if (!(opts.learning_rate > 0)) throw ValidationError("train: learning_rate must be > 0");

    Adam<float> adam(static_cast<float>(opts.learning_rate));
    Rng dropout_rng(derive_seed(opts.seed, "dropout"));

    TrainResult result;
    result.best_loss = std::numeric_limits<double>::infinity();
    int stale_epochs = 0;
    bool out_of_steps = false;

    for (int epoch = 1; epoch <= opts.max_epochs && !out_of_steps; ++epoch) {
        auto batches = make_batches(train_set, opts.batch_size,
                                    derive_seed(opts.seed, "epoch." + std::to_string(epoch)));
        double t_sum = 0, h_sum = 0;
        int64_t t_tokens = 0, h_tokens = 0;
        for (const auto& batch : batches) {
            Tape<float> tape;
            typename Transformer<float>::Forward fw{tape, true, &dropout_rng};
            auto loss = model.loss(fw, batch, src_vocab, tables);
            double total = loss.total.value()[0];
            if (!std::isfinite(total)) {
                throw std::runtime_error("train: loss is not finite at step " +
                                         std::to_string(result.steps + 1));
            }
            t_sum += static_cast<double>(loss.translation.value()[0]) *
                     static_cast<double>(loss.target_tokens);
            h_sum += static_cast<double>(loss.aux.value()[0]) *
                     static_cast<double>(loss.aux_tokens);
            t_tokens += loss.target_tokens;
            h_tokens += loss.aux_tokens;

            tape.backward(loss.total);
            adam.step(model.params);
            zero_grads(model.params);
            ++result.steps;
            if (opts.max_steps > 0 && result.steps >= opts.max_steps) {
                out_of_steps = true;
                break;
            }
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.steps = result.steps;
        stats.train_translation = t_tokens > 0 ? t_sum / static_cast<double>(t_tokens) : 0;
        stats.train_aux = h_tokens > 0 ? h_sum / static_cast<double>(h_tokens) : 0;
        stats.train_total =
            stats.train_translation + stats.train_aux * model.config.aux_loss_scale;

        double monitored = stats.train_total;
        if (!dev_set.empty()) {
            EvalLoss dev = evaluate_loss(model, dev_set, src_vocab, tables);
            stats.has_dev = true;
            stats.dev_total = dev.total;
            stats.dev_translation = dev.translation;
            stats.dev_aux = dev.aux;
            monitored = dev.total;
        }

        stats.improved = monitored < result.best_loss;
        if (stats.improved) {
            result.best_loss = monitored;
            result.best_epoch = epoch;
            result.best_params = model.params;
            stale_epochs = 0;
        } else {
            ++stale_epochs;
        }

        if (!opts.checkpoint_dir.empty()) {
            nlohmann::json extra = opts.checkpoint_extra;
            extra["epoch"] = epoch;
            extra["steps"] = result.steps;
            save_checkpoint(opts.checkpoint_dir + "/checkpoint.last.bin", model.params,
                            model.config, extra);
            if (stats.improved) {
                save_checkpoint(opts.checkpoint_dir + "/checkpoint.best.bin", model.params,
                                model.config, extra);
            }
        }

        result.epochs.push_back(stats);
        if (opts.on_epoch) opts.on_epoch(stats);
        if (stale_epochs >= opts.patience) {
            result.stopped_early = true;
            break;
        }
    }
    return result;
}

}  // namespace signtrans
