//! Permutation-level concurrent scoring with a bounded in-flight budget.
//!
//! Meant for network backends where the per-call latency dominates. The
//! cache is consulted up front, only misses go to the backend, and the
//! entries are assembled in perm_id order, so the result is identical to
//! the sequential path no matter how the calls interleave.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use benchleak_core::dataset::McqItem;
use benchleak_core::permute::{derive_all, permutation_count, RenderTemplate};
use benchleak_core::scoring::{
    CacheKey, CachedScore, ItemScorer, LengthNorm, LogProbEntry, LogProbSet, ScoreCache,
    ScoreError, ScoreOptions, ScoringBackend, ScoringMode,
};

pub struct ParallelScorer<'a, B: ScoringBackend + Sync> {
    backend: &'a B,
    cache: Mutex<&'a mut (dyn ScoreCache + Send)>,
    /// Maximum concurrent backend calls.
    concurrency: usize,
}

impl<'a, B: ScoringBackend + Sync> ParallelScorer<'a, B> {
    pub fn new(backend: &'a B, cache: &'a mut (dyn ScoreCache + Send), concurrency: usize) -> Self {
        Self {
            backend,
            cache: Mutex::new(cache),
            concurrency: concurrency.max(1),
        }
    }
}

impl<B: ScoringBackend + Sync> ItemScorer for ParallelScorer<'_, B> {
    fn model_id(&self) -> &str {
        self.backend.model_id()
    }

    fn score_item(
        &mut self,
        item: &McqItem,
        template: &RenderTemplate,
        opts: ScoreOptions,
    ) -> Result<LogProbSet, ScoreError> {
        let derived = derive_all(item, template)?;
        let jobs: Vec<_> = derived.iter().filter(|d| d.distinct).collect();
        let template_hash = template.template_hash();
        let prefix_bytes = match opts.mode {
            ScoringMode::WholeSequence => 0,
            ScoringMode::OptionsOnly => item.question.len(),
        };

        let keys: Vec<CacheKey> = jobs
            .iter()
            .map(|d| {
                CacheKey::new(
                    self.backend.model_id(),
                    opts.mode,
                    &template_hash,
                    &d.rendered,
                )
            })
            .collect();

        // Cache pass first; only misses fan out to the backend.
        let mut slots: Vec<Option<CachedScore>> = {
            let cache = self.cache.lock().expect("cache lock");
            keys.iter().map(|k| cache.get(k)).collect()
        };
        let pending: Vec<usize> = (0..jobs.len()).filter(|&i| slots[i].is_none()).collect();

        if !pending.is_empty() {
            let cursor = AtomicUsize::new(0);
            let failed = AtomicBool::new(false);
            let results: Vec<Mutex<Option<Result<CachedScore, ScoreError>>>> =
                pending.iter().map(|_| Mutex::new(None)).collect();
            let workers = self.concurrency.min(pending.len());
            std::thread::scope(|scope| {
                for _ in 0..workers {
                    scope.spawn(|| loop {
                        if failed.load(Ordering::Relaxed) {
                            break;
                        }
                        let slot = cursor.fetch_add(1, Ordering::Relaxed);
                        if slot >= pending.len() {
                            break;
                        }
                        let job = jobs[pending[slot]];
                        let outcome =
                            self.backend
                                .score_text(&job.rendered, prefix_bytes)
                                .map(|scored| CachedScore {
                                    logprob: scored.logprob,
                                    token_count: scored.token_count,
                                });
                        if outcome.is_err() {
                            failed.store(true, Ordering::Relaxed);
                        }
                        *results[slot].lock().expect("result lock") = Some(outcome);
                    });
                }
            });

            let outcomes: Vec<Option<Result<CachedScore, ScoreError>>> = results
                .into_iter()
                .map(|m| m.into_inner().expect("result lock"))
                .collect();
            // Surface the first explicit failure in perm order; slots left
            // empty by workers that bailed out only matter if nothing
            // failed outright.
            if let Some(err) = outcomes.iter().find_map(|o| match o {
                Some(Err(err)) => Some(err.clone()),
                _ => None,
            }) {
                return Err(err);
            }
            for (slot, &job_index) in pending.iter().enumerate() {
                match &outcomes[slot] {
                    Some(Ok(fresh)) => {
                        self.cache
                            .lock()
                            .expect("cache lock")
                            .put(&keys[job_index], *fresh)?;
                        slots[job_index] = Some(*fresh);
                    }
                    _ => {
                        return Err(ScoreError::Backend {
                            message: "scoring aborted after a permutation failed".to_string(),
                        })
                    }
                }
            }
        }

        let mut entries = Vec::with_capacity(jobs.len());
        for (job, slot) in jobs.iter().zip(&slots) {
            let cached = slot.expect("all slots resolved");
            let logprob = match opts.norm {
                LengthNorm::Sum => cached.logprob,
                LengthNorm::MeanPerToken => {
                    if cached.token_count == 0 {
                        return Err(ScoreError::NothingToScore {
                            prefix_bytes,
                            text_bytes: job.rendered.len(),
                        });
                    }
                    cached.logprob / f64::from(cached.token_count)
                }
            };
            if !logprob.is_finite() {
                return Err(ScoreError::NonFinite {
                    model_id: self.backend.model_id().to_string(),
                    perm_id: job.perm.perm_id(),
                });
            }
            entries.push(LogProbEntry {
                perm_id: job.perm.perm_id(),
                logprob,
            });
        }
        Ok(LogProbSet {
            item_id: item.id.clone(),
            model_id: self.backend.model_id().to_string(),
            template_hash,
            mode: opts.mode,
            norm: opts.norm,
            n_perms: permutation_count(item.options.len())?,
            entries,
        })
    }
}
