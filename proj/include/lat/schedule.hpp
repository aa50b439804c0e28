#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "lat/error.hpp"
#include "lat/param.hpp"

namespace lat {

// Blockwise fine-tuning: everything but the head starts frozen; every t
// epochs one more encoder block is unfrozen, last block first, and the
// learning rate is multiplied by lr_decay.
struct ScheduleConfig {
    int epochs_per_unfreeze = 2;  // t
    int num_blocks = 12;          // B
    double initial_lr = 3e-5;
    double lr_decay = 0.8;
    int total_epochs = 30;
    bool train_stem = false;  // patch/class/position embeddings stay frozen unless set

    std::vector<std::string> validation_issues() const {
        std::vector<std::string> issues;
        if (epochs_per_unfreeze < 1) issues.push_back("schedule: t must be >= 1");
        if (num_blocks < 1) issues.push_back("schedule: num_blocks must be >= 1");
        if (initial_lr <= 0) issues.push_back("schedule: initial_lr must be positive");
        if (lr_decay <= 0 || lr_decay > 1)
            issues.push_back("schedule: lr_decay must be in (0, 1]");
        if (total_epochs < 0) issues.push_back("schedule: total_epochs must be >= 0");
        return issues;
    }

    void validate() const {
        auto issues = validation_issues();
        if (!issues.empty()) throw ConfigError("invalid schedule config", issues);
    }
};

struct ScheduleState {
    int epoch = 0;               // next epoch index to be processed
    int next_unfreeze_block = 0; // b: highest block still frozen, 0 when all unfrozen
    double current_lr = 0.0;
    int unfreeze_count = 0;
};

// Per-epoch trace record for logs and assertions.
struct EpochEvent {
    int epoch = 0;
    int unfrozen_block = -1;  // -1: no unfreeze this epoch
    double lr = 0.0;
};

namespace detail {

inline bool name_in_block(const std::string& name, int block) {
    return name.rfind("backbone.block." + std::to_string(block) + ".", 0) == 0;
}

inline bool name_is_stem(const std::string& name) {
    return name.rfind("backbone.patch_embed.", 0) == 0 || name == "backbone.cls_token" ||
           name == "backbone.pos_embed";
}

}  // namespace detail

// Freezes all encoder blocks (and the final norm, which unfreezes together
// with the last block); the head always trains, the stem only if
// train_stem is set. Unrecognized parameter names are an error.
template <typename T>
ScheduleState schedule_init(const ParamList<T>& params, const ScheduleConfig& cfg) {
    cfg.validate();
    for (auto* p : params) {
        const std::string& n = p->name;
        if (n.rfind("backbone.block.", 0) == 0) {
            p->trainable = false;
        } else if (detail::name_is_stem(n)) {
            p->trainable = cfg.train_stem;
        } else if (n.rfind("backbone.ln_f.", 0) == 0) {
            p->trainable = false;
        } else if (n.rfind("head.", 0) == 0) {
            p->trainable = true;
        } else {
            throw NamingError("schedule_init: unrecognized parameter name '" + n + "'");
        }
    }
    ScheduleState st;
    st.epoch = 0;
    st.next_unfreeze_block = cfg.num_blocks;
    st.current_lr = cfg.initial_lr;
    st.unfreeze_count = 0;
    return st;
}

// Runs the per-epoch unfreeze rule for state.epoch, then advances it.
// When epoch % t == 0 and b > 0: unfreeze block b, b -= 1, lr *= decay.
template <typename T>
EpochEvent on_epoch_start(ScheduleState& state, const ScheduleConfig& cfg,
                          const ParamList<T>& params) {
    EpochEvent ev;
    ev.epoch = state.epoch;
    ev.lr = state.current_lr;
    if (state.epoch % cfg.epochs_per_unfreeze == 0 && state.next_unfreeze_block > 0) {
        const int b = state.next_unfreeze_block;
        bool matched = false;
        for (auto* p : params) {
            if (detail::name_in_block(p->name, b)) {
                p->trainable = true;
                matched = true;
            } else if (b == cfg.num_blocks && p->name.rfind("backbone.ln_f.", 0) == 0) {
                p->trainable = true;
            }
        }
        if (!matched) {
            throw NamingError("on_epoch_start: no parameters found for block " +
                              std::to_string(b));
        }
        state.next_unfreeze_block = b - 1;
        state.current_lr *= cfg.lr_decay;
        ++state.unfreeze_count;
        ev.unfrozen_block = b;
        ev.lr = state.current_lr;
    }
    ++state.epoch;
    return ev;
}

// Names of the currently trainable parameters, sorted.
template <typename T>
std::vector<std::string> trainable_set(const ParamList<T>& params) {
    std::vector<std::string> names;
    for (const auto* p : params) {
        if (p->trainable) names.push_back(p->name);
    }
    std::sort(names.begin(), names.end());
    return names;
}

}  // namespace lat
