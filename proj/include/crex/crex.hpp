#pragma once

// Umbrella header: continual relation extraction with rationale-tuned seq2seq
// backbones, episodic memory replay, and LLM-generated rationales.

#include "crex/backbone.hpp"
#include "crex/cache.hpp"
#include "crex/continual.hpp"
#include "crex/core.hpp"
#include "crex/dataset.hpp"
#include "crex/eval.hpp"
#include "crex/experiment.hpp"
#include "crex/formatting.hpp"
#include "crex/kmeans.hpp"
#include "crex/memory.hpp"
#include "crex/prompts.hpp"
#include "crex/provider.hpp"
#include "crex/rationale_service.hpp"
#include "crex/replay.hpp"
#include "crex/similarity.hpp"
#include "crex/tiny_backbone.hpp"
#include "crex/trainer.hpp"
#include "crex/util.hpp"
#include "crex/version.hpp"
