use std::time::Duration;

use super::ProviderError;

/// Bounded exponential-backoff retry for transport failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub attempts: u32,
    /// Delay before the second attempt; doubles for each further attempt.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(200),
        }
    }
}

impl RetryPolicy {
    /// Three attempts with no sleeping, for tests.
    pub fn immediate() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::ZERO,
        }
    }

    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, ProviderError>) -> Result<T, ProviderError> {
        let mut delay = self.base_delay;
        let mut attempt = 1;
        loop {
            match op() {
                Err(e) if e.is_retryable() && attempt < self.attempts.max(1) => {
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                    delay *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn retries_transport_errors_up_to_bound() {
        let mut calls = 0;
        let result: Result<(), _> = RetryPolicy::immediate().run(|| {
            calls += 1;
            Err(ProviderError::Transport("down".into()))
        });
        assert!(result.is_err());
        assert_eq!(calls, 3);
    }

    #[test]
    fn recovers_after_transient_failure() {
        let mut calls = 0;
        let result = RetryPolicy::immediate().run(|| {
            calls += 1;
            if calls < 2 {
                Err(ProviderError::Transport("blip".into()))
            } else {
                Ok(7)
            }
        });
        assert_eq!(result.unwrap(), 7);
        assert_eq!(calls, 2);
    }

    #[test]
    fn does_not_retry_other_errors() {
        let mut calls = 0;
        let result: Result<(), _> = RetryPolicy::immediate().run(|| {
            calls += 1;
            Err(ProviderError::Rejected("bad key".into()))
        });
        assert!(result.is_err());
        assert_eq!(calls, 1);
    }
}
