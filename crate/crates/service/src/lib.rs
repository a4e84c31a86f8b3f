//! Live DAARIA sessions for the HUD cockpit.
//!
//! Wire format: newline-delimited JSON in web-socket text messages on
//! `/session?name=<session>&scenario=<scenario>`.
//!
//! Client to server:
//! `{"type":"control","gaze_px":[u,v]|null,"ego_speed":f|null,"mode":"run"|"pause"|"step"}`,
//! `{"type":"load","scenario":s,"seed":n}`.
//!
//! Server to client:
//! `{"type":"state","t":f,"tick":n,"vane":[{"id":s,"bearing":f,"height":f,"color":[r,g,b],"symbol":s,"danger":f}],"bird":[...],"scene":[...],"considered":[ids]}`,
//! plus `{"type":"loaded",...}` and `{"type":"error","message":s}`.

pub mod server;
pub mod session;

pub use server::{bind, serve, Server, ServiceConfig, ServiceError};
pub use session::{ClientMessage, Controls, Mode, ServerMessage, Session};
