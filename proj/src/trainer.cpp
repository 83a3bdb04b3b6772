#include "kpe_forge/trainer.hpp"

#include "kpe_forge/error.hpp"
#include "kpe_forge/rng.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

namespace kpeforge {

Checkpoint makeCheckpoint(const Transformer<float>& model, const AdamState<float>* adam, const TrainingState& state) {
    Checkpoint ck;
    ck.kind = "transformer";
    ck.configText = model.config().serialize();
    ck.configHash = model.config().hash();
    ck.state = state;
    ck.params = model.params();
    if (adam && !adam->m.empty()) {
        ck.adamM = adam->m;
        ck.adamV = adam->v;
        ck.state.adamStep = adam->step;
    }
    return ck;
}

Transformer<float> modelFromCheckpoint(const Checkpoint& ckpt) {
    if (ckpt.kind != "transformer") throw FormatError("checkpoint holds a '" + ckpt.kind + "' model, not a transformer");
    Transformer<float> model(ModelConfig::parse(ckpt.configText));
    if (model.config().hash() != ckpt.configHash) throw FormatError("checkpoint config text does not match its hash");
    model.setParams(ckpt.params);
    return model;
}

TrainResult trainTransformer(const std::vector<SequenceExample>& data, const ModelConfig& modelConfig,
                             const TrainConfig& config, std::uint64_t seed, const EpochCallback& onEpoch,
                             const Checkpoint* resume) {
    if (data.empty()) throw InvalidArgument("training set is empty");
    if (config.batchSize < 1 || config.epochs < 0) throw ConfigError("train.batch_size must be >= 1 and epochs >= 0");

    TrainResult res{Transformer<float>(modelConfig), {}, {}, {}};
    Rng rng(seed);
    res.model.initialize(deriveSeed(seed, 0));
    res.state.lr = config.adam.lr;
    res.state.bestLoss = std::numeric_limits<double>::infinity();
    if (resume) {
        if (resume->configHash != modelConfig.hash()) throw ConfigError("resume checkpoint was trained with another model config");
        res.model.setParams(resume->params);
        res.state = resume->state;
        res.adam.m = resume->adamM;
        res.adam.v = resume->adamV;
        res.adam.step = resume->state.adamStep;
        rng.setState(resume->state.rng);
    }

    std::vector<std::size_t> order(data.size());
    ParamStore<float> grad = res.model.params().zerosLike();
    for (int epoch = res.state.epoch; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

        AdamHyper hyper = config.adam;
        hyper.lr = res.state.lr;
        LossBreakdown sum;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batchSize)) {
            SequenceBatch batch;
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batchSize));
            for (std::size_t i = start; i < end; ++i) batch.examples.push_back(&data[order[i]]);
            grad.setZero();
            const LossBreakdown lb = res.model.lossAndGradient(batch, grad);
            if (!std::isfinite(lb.total)) {
                char msg[160];
                std::snprintf(msg, sizeof msg, "non-finite loss at epoch %d, batch starting at %zu (L_T=%g L_I=%g L_K=%g)",
                              epoch, start, lb.text, lb.image, lb.cond);
                throw DivergenceError(msg);
            }
            const double w = static_cast<double>(end - start);
            sum.text += w * lb.text;
            sum.image += w * lb.image;
            sum.cond += w * lb.cond;
            sum.total += w * lb.total;
            adamStep<float>(res.model.params().flat(), grad.flat(), res.adam, hyper);
        }
        const double n = static_cast<double>(data.size());
        const EpochRecord rec{epoch, res.state.lr, {sum.text / n, sum.image / n, sum.cond / n, sum.total / n}};
        res.log.push_back(rec);

        if (rec.loss.total < res.state.bestLoss) {
            res.state.bestLoss = rec.loss.total;
            res.state.plateau = 0;
        } else if (++res.state.plateau >= config.plateauEpochs) {
            res.state.lr = std::max(res.state.lr * config.lrFactor, config.minLr);
            res.state.plateau = 0;
        }
        res.state.epoch = epoch + 1;
        res.state.adamStep = res.adam.step;
        res.state.rng = rng.state();
        if (onEpoch) onEpoch(res);
    }
    return res;
}

void writeLossCsv(std::ostream& out, const std::vector<EpochRecord>& log) {
    out << "epoch,lr,L_T,L_I,L_K,total\n";
    char line[256];
    for (const auto& r : log) {
        std::snprintf(line, sizeof line, "%d,%.9g,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.lr, r.loss.text, r.loss.image,
                      r.loss.cond, r.loss.total);
        out << line;
    }
}

} // namespace kpeforge
