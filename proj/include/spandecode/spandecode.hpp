#pragma once

#include "spandecode/decoding.hpp"
#include "spandecode/error.hpp"
#include "spandecode/harness.hpp"
#include "spandecode/metrics.hpp"
#include "spandecode/prompting.hpp"
#include "spandecode/remote_scorer.hpp"
#include "spandecode/rss.hpp"
#include "spandecode/scorer.hpp"
#include "spandecode/scorer_factory.hpp"
#include "spandecode/table_lm.hpp"
#include "spandecode/tokenizer.hpp"
