#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "occludere/adam.hpp"
#include "occludere/checkpoint.hpp"
#include "occludere/config.hpp"
#include "occludere/dataset.hpp"
#include "occludere/net.hpp"

namespace occludere {

struct TrainLogEntry {
    std::size_t epoch = 0;
    std::size_t step = 0;
    double loss = 0.0;
    double yaw = 0.0;
    double pitch = 0.0;
    double roll = 0.0;
    double latent = std::numeric_limits<double>::quiet_NaN();  // NaN when no latent targets are in play
};

inline std::string format_log_entry(const TrainLogEntry& e) {
    const auto f = [](double v) { return std::isnan(v) ? std::string("n/a") : format_fixed(v, 6); };
    return "epoch=" + std::to_string(e.epoch) + " step=" + std::to_string(e.step) + " loss=" + f(e.loss) +
           " yaw=" + f(e.yaw) + " pitch=" + f(e.pitch) + " roll=" + f(e.roll) + " latent=" + f(e.latent);
}

template <class T>
struct TrainSession {
    PoseNet<T> net;
    AdamState<T> adam;
    NormalizationSpec normalization;
    std::uint64_t epoch = 0;
    std::vector<TrainLogEntry> log;
    std::vector<double> epoch_loss;  // mean total loss per epoch

    Checkpoint checkpoint(const RunConfig& config) const {
        return capture_checkpoint(net, adam, config, normalization, epoch);
    }
};

/// Fisher-Yates on raw generator output, so permutations do not depend on
/// the standard library's distribution implementations.
inline void shuffle_indices(std::vector<std::size_t>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng() % i]);
}

namespace detail {

template <class T>
BasicTensor<T> latent_targets(const LatentStore& store, const std::vector<std::string>& source_ids) {
    std::vector<T> values;
    values.reserve(source_ids.size() * store.dim());
    for (const auto& id : source_ids) {
        const auto v = store.find(id);
        require(v.has_value(), ErrorKind::pairing, "no stored latent for source image " + id);
        for (double x : *v) values.push_back(static_cast<T>(x));
    }
    return BasicTensor<T>(Shape{source_ids.size(), store.dim()}, std::move(values));
}

} // namespace detail

/// Runs `epochs` passes in seeded random order. With latent targets and
/// beta > 0 the objective is the combined angle and latent loss; otherwise
/// the three angle losses alone.
template <class T>
void train_epochs(TrainSession<T>& s, const DatasetManifest& manifest, const FaceCache& cache,
                  const TrainConfig& cfg, const LatentStore* latents, std::mt19937_64& rng,
                  std::ostream* log = nullptr) {
    require(!manifest.empty(), ErrorKind::contract, "training manifest is empty");
    const double beta = cfg.weights.beta;
    require(beta == 0.0 || latents, ErrorKind::contract, "beta > 0 needs latent targets");
    const BinSpec& bins = s.net.config().bins;
    std::vector<std::size_t> order(manifest.size());
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        shuffle_indices(order, rng);
        double epoch_total = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const std::span<const std::size_t> rows(order.data() + start, end - start);
            const auto batch = make_batch<T>(manifest, cache, rows, s.normalization, bins);
            const auto out = s.net.forward(batch.images);
            std::array<AngleLoss<T>, 3> angle;
            for (std::size_t a = 0; a < 3; ++a)
                angle[a] = angle_loss(out.logits[a], batch.degrees[a], bins, cfg.weights.alpha);

            TrainLogEntry entry;
            entry.epoch = s.epoch + 1;
            entry.step = s.adam.step + 1;
            entry.yaw = static_cast<double>(angle[0].total.item());
            entry.pitch = static_cast<double>(angle[1].total.item());
            entry.roll = static_cast<double>(angle[2].total.item());
            BasicTensor<T> loss;
            if (latents) {
                const auto target = detail::latent_targets<T>(*latents, batch.source_ids);
                loss = total_loss(angle[0].total, angle[1].total, angle[2].total, out.latent, target, beta);
                NoGradGuard guard;
                entry.latent = static_cast<double>(mse(out.latent.detach(), target).item());
            } else {
                loss = total_loss(angle[0].total, angle[1].total, angle[2].total, out.latent, out.latent, 0.0);
            }
            entry.loss = static_cast<double>(loss.item());
            if (!std::isfinite(entry.loss))
                fail(ErrorKind::numeric, "non-finite loss at " + format_log_entry(entry) + " (first id " +
                                             batch.ids.front() + "); lower the learning rate");
            s.net.zero_grad();
            backward(loss);
            adam_step(s.net.parameters(), s.adam);
            if (log) *log << format_log_entry(entry) << "\n";
            s.log.push_back(entry);
            epoch_total += entry.loss;
            ++batches;
        }
        ++s.epoch;
        s.epoch_loss.push_back(epoch_total / static_cast<double>(batches));
        if (log) *log << "epoch " << s.epoch << " mean_loss=" << format_fixed(s.epoch_loss.back(), 6) << "\n";
    }
}

inline NormalizationSpec choose_normalization(const RunConfig& cfg, const FaceCache& cache) {
    return cfg.train.normalization == "imagenet" ? NormalizationSpec::imagenet() : compute_normalization(cache);
}

/// Stage 1: train from scratch on clean images with the angle losses only.
template <class T>
TrainSession<T> stage1_train(const RunConfig& cfg, const DatasetManifest& clean, std::ostream* log = nullptr) {
    cfg.validate();
    require(!clean.empty(), ErrorKind::contract, "stage 1 needs a non-empty clean manifest");
    std::mt19937_64 rng(cfg.train.seed);
    const FaceCache cache(clean, cfg.net.input_size);
    TrainSession<T> s;
    s.net = PoseNet<T>(cfg.net, rng());
    s.adam = AdamState<T>(cfg.train.adam(), s.net.parameters());
    s.normalization = choose_normalization(cfg, cache);
    if (log) *log << "stage1 seed=" << cfg.train.seed << " config=" << config_hash(cfg) << " records=" << clean.size()
                  << "\n";
    TrainConfig tc = cfg.train;
    tc.weights.beta = 0.0;
    train_epochs(s, clean, cache, tc, nullptr, rng, log);
    return s;
}

/// Stage 2: latent embeddings of every record, computed without recording a graph.
template <class T>
LatentStore extract_latents(const PoseNet<T>& net, const NormalizationSpec& norm, const DatasetManifest& manifest,
                            const std::string& checkpoint_id, std::size_t batch_size = 64) {
    NoGradGuard guard;
    LatentStore store(net.config().latent_dim(), checkpoint_id);
    const FaceCache cache(manifest, net.config().input_size);
    std::vector<std::size_t> rows;
    for (std::size_t start = 0; start < manifest.size(); start += batch_size) {
        rows.clear();
        for (std::size_t i = start; i < std::min(manifest.size(), start + batch_size); ++i) rows.push_back(i);
        const auto batch = make_batch<T>(manifest, cache, rows, norm, net.config().bins);
        const auto latent = net.embed(batch.images);
        const std::size_t d = latent.dim(1);
        std::vector<double> v(d);
        for (std::size_t b = 0; b < rows.size(); ++b) {
            for (std::size_t j = 0; j < d; ++j) v[j] = static_cast<double>(latent.data()[b * d + j]);
            store.add(batch.ids[b], v);
        }
    }
    return store;
}

/// Checks that every record pairs with a stored latent before any training step.
inline void check_pairing(const DatasetManifest& manifest, const LatentStore& store) {
    std::size_t missing = 0;
    std::string first;
    for (const auto& r : manifest.records)
        if (!store.find(r.source_id)) {
            if (!missing) first = r.id + " (source " + r.source_id + ")";
            ++missing;
        }
    require(missing == 0, ErrorKind::pairing,
            std::to_string(missing) + " record(s) have no stored latent; first: " + first);
}

/// Stage 3: fine-tune the stage-1 model on occluded images against the stored
/// clean latents. The optimizer state starts fresh.
template <class T>
TrainSession<T> stage3_train(const RunConfig& cfg, const DatasetManifest& occluded, const LatentStore& store,
                             const Checkpoint& init, std::ostream* log = nullptr,
                             const DatasetManifest* clean = nullptr) {
    cfg.validate();
    require(!occluded.empty(), ErrorKind::contract, "stage 3 needs a non-empty occluded manifest");
    require(init.config.net == cfg.net, ErrorKind::config, "stage 3 network config differs from the init checkpoint");
    require(cfg.train.allow_latent_mismatch || store.checkpoint_id() == init.id, ErrorKind::pairing,
            "latent store was produced by checkpoint " + store.checkpoint_id() + ", not by init checkpoint " + init.id +
                " (set allow_latent_mismatch to override)");
    require(store.dim() == cfg.net.latent_dim(), ErrorKind::shape,
            "latent store dimension " + std::to_string(store.dim()) + " differs from the network's " +
                std::to_string(cfg.net.latent_dim()));

    std::mt19937_64 rng(cfg.train.seed);
    rng.discard(1);  // keeps the shuffle stream aligned with stage 1, whose first draw seeds the init
    DatasetManifest train = occluded;
    if (cfg.train.mix_clean > 0.0) {
        require(clean && !clean->empty(), ErrorKind::config, "mix_clean needs the clean manifest");
        std::vector<std::size_t> pick(clean->size());
        for (std::size_t i = 0; i < pick.size(); ++i) pick[i] = i;
        shuffle_indices(pick, rng);
        const auto extra = std::min(
            pick.size(), static_cast<std::size_t>(std::llround(cfg.train.mix_clean * static_cast<double>(occluded.size()))));
        for (std::size_t i = 0; i < extra; ++i) {
            ManifestRecord r = clean->records[pick[i]];
            r.path = std::filesystem::absolute(clean->resolve(r)).string();
            train.records.push_back(std::move(r));
        }
    }
    check_pairing(train, store);
    const FaceCache cache(train, cfg.net.input_size);

    TrainSession<T> s;
    s.net = restore_net<T>(init);
    s.adam = AdamState<T>(cfg.train.adam(), s.net.parameters());
    s.normalization = init.normalization;
    if (log) *log << "stage3 seed=" << cfg.train.seed << " beta=" << format_number(cfg.train.weights.beta)
                  << " config=" << config_hash(cfg) << " init=" << init.id << " records=" << train.size() << "\n";
    train_epochs(s, train, cache, cfg.train, &store, rng, log);
    return s;
}

} // namespace occludere
