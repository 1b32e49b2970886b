#pragma once

#include <string>

#include "moediff/model.hpp"
#include "moediff/schedule.hpp"

namespace moediff {

struct Checkpoint {
    DenoiserModel model;
    DiffusionSchedule schedule;
    int step = 0;
    std::string stage;  // "init" | "stage1" | "dpo"
};

/// Versioned JSON checkpoint: dims, every parameter matrix (shapes +
/// row-major values), the schedule betas, the step counter and a stage tag.
/// Doubles serialize with shortest round-trip formatting, so save/load is
/// value-exact and reruns are byte-identical.
void save_checkpoint(const std::string& path, const DenoiserModel& model,
                     const DiffusionSchedule& schedule, int step, const std::string& stage);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace moediff
