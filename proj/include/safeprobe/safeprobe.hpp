#pragma once

#include "safeprobe/diagnostics.hpp"
#include "safeprobe/direction.hpp"
#include "safeprobe/error.hpp"
#include "safeprobe/eval.hpp"
#include "safeprobe/exec_judge.hpp"
#include "safeprobe/intervene.hpp"
#include "safeprobe/paradigm.hpp"
#include "safeprobe/risk.hpp"
#include "safeprobe/rng.hpp"
#include "safeprobe/scores.hpp"
#include "safeprobe/synth.hpp"
#include "safeprobe/table.hpp"
#include "safeprobe/trace_store.hpp"
