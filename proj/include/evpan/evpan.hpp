#pragma once

// Convenience umbrella for the whole library.

#include "evpan/accumulate.hpp"
#include "evpan/commands.hpp"
#include "evpan/core.hpp"
#include "evpan/evidential.hpp"
#include "evpan/fusion.hpp"
#include "evpan/gradcheck.hpp"
#include "evpan/grid.hpp"
#include "evpan/instance_set.hpp"
#include "evpan/losses.hpp"
#include "evpan/metrics.hpp"
#include "evpan/report.hpp"
#include "evpan/rng.hpp"
#include "evpan/synthdata.hpp"
#include "evpan/tensor_file.hpp"
