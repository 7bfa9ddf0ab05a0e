//! Sealed request/response between the owner and servers.

use std::sync::Arc;

use qss_core::OwnerId;
use qss_transport::endpoint::{EndpointError, SecureEndpoint};
use thiserror::Error;

use crate::net::{Network, NetError, TappedMessage, TrafficLog};
use crate::wire::{ErrorCode, Message, WireError};

pub const OWNER_FLAG: u16 = 0x8000;

pub fn server_app(j: u32) -> String {
    format!("server{j}")
}

pub fn owner_app(owner: OwnerId) -> String {
    format!("owner{}", owner.0)
}

pub fn server_sender(j: u32) -> u16 {
    j as u16
}

pub fn owner_sender(owner: OwnerId) -> u16 {
    OWNER_FLAG | owner.0 as u16
}

/// The application behind a frame sender id.
pub fn app_for_sender(sender: u16) -> String {
    if sender & OWNER_FLAG != 0 {
        owner_app(OwnerId((sender & !OWNER_FLAG) as u32))
    } else {
        server_app(sender as u32)
    }
}

#[derive(Debug, Error)]
pub enum CallError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Endpoint(#[from] EndpointError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("{peer} sent no usable reply")]
    NoReply { peer: String },
    #[error("{peer} refused: {code:?}: {detail}")]
    Refused { peer: String, code: ErrorCode, detail: String },
}

impl CallError {
    pub fn is_retryable(&self) -> bool {
        match self {
            CallError::Endpoint(e) => e.is_retryable(),
            CallError::Refused { code, .. } => code.is_retryable(),
            _ => false,
        }
    }

    pub fn code(&self) -> Option<ErrorCode> {
        match self {
            CallError::Refused { code, .. } => Some(*code),
            _ => None,
        }
    }
}

pub struct Messenger {
    endpoint: SecureEndpoint,
    network: Arc<dyn Network>,
    log: Option<Arc<TrafficLog>>,
}

impl Messenger {
    pub fn new(endpoint: SecureEndpoint, network: Arc<dyn Network>, log: Option<Arc<TrafficLog>>) -> Self {
        Self { endpoint, network, log }
    }

    pub fn app(&self) -> &str {
        self.endpoint.app()
    }

    pub fn endpoint(&self) -> &SecureEndpoint {
        &self.endpoint
    }

    fn tap(&self, to: &str, msg_type: u8, payload: &[u8]) {
        if let Some(log) = &self.log {
            log.record_message(TappedMessage {
                from: self.app().to_string(),
                to: to.to_string(),
                msg_type,
                payload: payload.to_vec(),
            });
        }
    }

    /// Sends `msg` to `to` and returns its reply. Error replies become
    /// [`CallError::Refused`].
    pub fn call(&self, to: &str, msg: &Message, purpose: &str) -> Result<Message, CallError> {
        let payload = msg.encode();
        self.tap(to, msg.msg_type(), &payload);
        let frames = self.endpoint.seal_message(to, msg.msg_type(), &payload, purpose)?;
        let reply = self.network.call(self.app(), to, frames)?;
        if reply.is_empty() {
            return Err(CallError::NoReply { peer: to.to_string() });
        }
        let incoming = self.endpoint.open_message(&reply)?;
        match Message::decode(incoming.msg_type, &incoming.payload)? {
            Message::Error { code, detail } => Err(CallError::Refused {
                peer: to.to_string(),
                code,
                detail,
            }),
            m => Ok(m),
        }
    }

    /// Opens a request, runs `handler` on it and seals the reply to the
    /// sender. Frames that do not open get no reply.
    pub fn serve(&self, frames: Vec<Vec<u8>>, handler: impl FnOnce(u16, Message) -> (Message, &'static str)) -> Vec<Vec<u8>> {
        let incoming = match self.endpoint.open_message(&frames) {
            Ok(m) => m,
            Err(e) => {
                log::warn!("{}: dropped request: {e}", self.app());
                return Vec::new();
            }
        };
        let peer = app_for_sender(incoming.sender);
        let (reply, purpose) = match Message::decode(incoming.msg_type, &incoming.payload) {
            Ok(msg) => handler(incoming.sender, msg),
            Err(e) => (Message::error(ErrorCode::Malformed, e.to_string()), "control"),
        };
        let payload = reply.encode();
        self.tap(&peer, reply.msg_type(), &payload);
        match self.endpoint.seal_message(&peer, reply.msg_type(), &payload, purpose) {
            Ok(frames) => frames,
            Err(e) => {
                log::warn!("{}: cannot answer {peer}: {e}", self.app());
                Vec::new()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sender_ids_name_applications() {
        assert_eq!(app_for_sender(server_sender(3)), "server3");
        assert_eq!(app_for_sender(owner_sender(OwnerId(7))), "owner7");
    }
}
