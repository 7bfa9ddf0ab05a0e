//! The data owner's side: registration, reconstruction and pre-computation
//! requests.

use std::sync::Arc;
use std::thread;
use std::time::Duration;

use qss_core::scheme::{encode_password, make_request, reconstruct, register, verify_and_decode, Response};
use qss_core::{DataId, OwnerId, Quorum, SchemeError, SchemeParams};
use rand::RngCore;
use thiserror::Error;

use crate::peer::{server_app, CallError, Messenger};
use crate::wire::{ErrorCode, Message, PrecomputeRequest, ReconRequest, SlotId, StoreShares};

#[derive(Debug, Error)]
pub enum OwnerError {
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error("authentication failed")]
    AuthenticationFailed,
    #[error("server {server}: {source}")]
    Server { server: u32, source: CallError },
    #[error("registration incomplete: stored on {stored:?}, failed on {failed:?}; stored bundles {cleanup}")]
    Partial {
        stored: Vec<u32>,
        failed: Vec<(u32, String)>,
        cleanup: &'static str,
    },
    #[error("inconsistent responses: {0}")]
    Inconsistent(String),
    #[error("no quorum of reachable servers")]
    NoQuorum,
}

impl OwnerError {
    /// Infrastructure faults that another attempt may clear.
    pub fn is_retryable(&self) -> bool {
        matches!(self, OwnerError::Server { source, .. } if source.is_retryable())
    }
}

/// A successful reconstruction.
#[derive(Clone, Debug)]
pub struct Reconstructed {
    pub data: Vec<u8>,
    pub quorum: Quorum,
    pub slot: SlotId,
}

pub struct OwnerClient {
    owner: OwnerId,
    params: SchemeParams,
    messenger: Arc<Messenger>,
    retries: u32,
    backoff: Duration,
}

impl OwnerClient {
    pub fn new(owner: OwnerId, params: SchemeParams, messenger: Messenger) -> Self {
        Self {
            owner,
            params,
            messenger: Arc::new(messenger),
            retries: 20,
            backoff: Duration::from_millis(5),
        }
    }

    pub fn owner(&self) -> OwnerId {
        self.owner
    }

    pub fn params(&self) -> &SchemeParams {
        &self.params
    }

    pub fn messenger(&self) -> &Messenger {
        &self.messenger
    }

    fn call(&self, server: u32, msg: &Message, purpose: &str) -> Result<Message, OwnerError> {
        self.messenger
            .call(&server_app(server), msg, purpose)
            .map_err(|source| OwnerError::Server { server, source })
    }

    /// Calls with retries on retryable refusals.
    fn call_retrying(&self, server: u32, msg: &Message, purpose: &str) -> Result<Message, OwnerError> {
        let mut tries = 0;
        loop {
            match self.call(server, msg, purpose) {
                Err(e) if e.is_retryable() && tries < self.retries => {
                    tries += 1;
                    thread::sleep(self.backoff * tries);
                }
                other => return other,
            }
        }
    }

    /// Shares `data` over all n servers under a fresh random data id.
    pub fn register(&self, data: &[u8], passphrase: &[u8]) -> Result<DataId, OwnerError> {
        let id = DataId(rand::thread_rng().next_u64());
        self.register_as(id, data, passphrase, false)?;
        Ok(id)
    }

    /// Shares `data` under `data_id`. Every server must acknowledge; if any
    /// does not, bundles already stored are deleted again.
    pub fn register_as(&self, data_id: DataId, data: &[u8], passphrase: &[u8], overwrite: bool) -> Result<(), OwnerError> {
        let password = encode_password(passphrase, self.params.field())?;
        let bundles = register(data, &password, &self.params, self.owner, data_id, &mut rand::thread_rng())?;
        drop(password);
        let results: Vec<(u32, Result<Message, OwnerError>)> = thread::scope(|s| {
            let handles: Vec<_> = bundles
                .into_iter()
                .map(|b| {
                    let msg = Message::StoreShares(StoreShares {
                        owner: b.owner,
                        data_id: b.data_id,
                        server: b.server,
                        n: self.params.n(),
                        t: self.params.t(),
                        byte_len: b.byte_len,
                        overwrite,
                        password_share: b.password_share,
                        data_shares: b.data_shares,
                    });
                    let server = b.server;
                    (server, s.spawn(move || self.call_retrying(server, &msg, "registration")))
                })
                .collect();
            handles.into_iter().map(|(j, h)| (j, h.join().expect("sender thread"))).collect()
        });
        let mut stored = Vec::new();
        let mut failed = Vec::new();
        for (j, r) in results {
            match r {
                Ok(Message::StoreAck { owner, data_id: d }) if owner == self.owner && d == data_id => stored.push(j),
                Ok(other) => failed.push((j, format!("unexpected reply type {}", other.msg_type()))),
                Err(e) => failed.push((j, e.to_string())),
            }
        }
        if failed.is_empty() {
            return Ok(());
        }
        let mut cleanup = "deleted";
        if !overwrite {
            for &j in &stored {
                let msg = Message::DeleteBundle {
                    owner: self.owner,
                    data_id,
                };
                if self.call(j, &msg, "registration").is_err() {
                    cleanup = "flagged for cleanup";
                }
            }
        } else {
            cleanup = "left in place";
        }
        Err(OwnerError::Partial { stored, failed, cleanup })
    }

    fn quorum_or_default(&self, quorum: Option<&Quorum>, skip: &[u32]) -> Result<Quorum, OwnerError> {
        if let Some(q) = quorum {
            return Ok(q.clone());
        }
        let members: Vec<u32> = (1..=self.params.n())
            .filter(|j| !skip.contains(j))
            .take(self.params.quorum_size())
            .collect();
        if members.len() < self.params.quorum_size() {
            return Err(OwnerError::NoQuorum);
        }
        Ok(Quorum::new(members, self.params.n())?)
    }

    /// Reconstructs `data_id`. Without an explicit quorum the lowest-indexed
    /// reachable servers are used.
    pub fn reconstruct(&self, data_id: DataId, passphrase: &[u8], quorum: Option<&Quorum>) -> Result<Reconstructed, OwnerError> {
        let mut unreachable = Vec::new();
        loop {
            let q = self.quorum_or_default(quorum, &unreachable)?;
            match self.attempt(data_id, passphrase, &q) {
                Err(OwnerError::Server {
                    server,
                    source: CallError::Net(e),
                }) if quorum.is_none() => {
                    log::warn!("server {server} unreachable ({e}); choosing another quorum");
                    unreachable.push(server);
                }
                Err(OwnerError::Server {
                    server,
                    source:
                        CallError::Refused {
                            code: ErrorCode::PeerUnreachable,
                            ref detail,
                            ..
                        },
                }) if quorum.is_none() && detail.parse::<u32>().is_ok() => {
                    let peer: u32 = detail.parse().expect("checked");
                    log::warn!("server {server} cannot reach server {peer}; choosing another quorum");
                    unreachable.push(peer);
                }
                other => return other,
            }
        }
    }

    fn attempt(&self, data_id: DataId, passphrase: &[u8], quorum: &Quorum) -> Result<Reconstructed, OwnerError> {
        let guess = encode_password(passphrase, self.params.field())?;
        let requests = make_request(&guess, &self.params, quorum, &mut rand::thread_rng())?;
        let msg_for = |i: usize, slot: Option<SlotId>| {
            Message::ReconRequest(ReconRequest {
                owner: self.owner,
                data_id,
                n: self.params.n(),
                quorum: quorum.clone(),
                slot,
                password_share: requests[i].password_share.clone(),
            })
        };
        let first = self.call_retrying(quorum.members()[0], &msg_for(0, None), "reconstruction")?;
        let Message::ReconResponse(first) = first else {
            return Err(OwnerError::Inconsistent("coordinator answered with another message".into()));
        };
        let slot = first.slot;
        let rest: Vec<Result<Message, OwnerError>> = thread::scope(|s| {
            let handles: Vec<_> = quorum.members()[1..]
                .iter()
                .enumerate()
                .map(|(i, &j)| {
                    let msg = msg_for(i + 1, Some(slot));
                    s.spawn(move || self.call_retrying(j, &msg, "reconstruction"))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("request thread")).collect()
        });
        let mut responses = vec![first];
        for r in rest {
            match r? {
                Message::ReconResponse(r) => responses.push(r),
                other => return Err(OwnerError::Inconsistent(format!("reply type {}", other.msg_type()))),
            }
        }
        let byte_len = responses[0].byte_len;
        for (r, &j) in responses.iter().zip(quorum.members()) {
            if r.server != j || r.slot != slot || r.byte_len != byte_len || r.first_block != 0 {
                return Err(OwnerError::Inconsistent(format!("response from server {}", r.server)));
            }
        }
        let responses: Vec<Response> = responses
            .into_iter()
            .map(|r| Response {
                server: r.server,
                values: r.values,
            })
            .collect();
        let bv = reconstruct(&responses, byte_len, &self.params).map_err(|e| match e {
            SchemeError::ResponseLengthMismatch => OwnerError::Inconsistent(e.to_string()),
            e => OwnerError::Scheme(e),
        })?;
        let data = verify_and_decode(&bv, &guess).map_err(|_| OwnerError::AuthenticationFailed)?;
        Ok(Reconstructed {
            data,
            quorum: quorum.clone(),
            slot,
        })
    }

    /// Asks the lowest member of `members` to pre-compute `attempts` attempts.
    pub fn precompute(&self, data_id: DataId, members: &Quorum, attempts: u32) -> Result<(), OwnerError> {
        let msg = Message::Precompute(PrecomputeRequest {
            owner: self.owner,
            data_id,
            n: self.params.n(),
            members: members.clone(),
            attempts,
        });
        let coordinator = *members.members().first().ok_or(OwnerError::NoQuorum)?;
        match self.call(coordinator, &msg, "precomputation")? {
            Message::PrecompReply => Ok(()),
            other => Err(OwnerError::Inconsistent(format!("reply type {}", other.msg_type()))),
        }
    }

    /// The server refusal code, if this error carries one.
    pub fn refusal(e: &OwnerError) -> Option<ErrorCode> {
        match e {
            OwnerError::Server { source, .. } => source.code(),
            _ => None,
        }
    }
}
