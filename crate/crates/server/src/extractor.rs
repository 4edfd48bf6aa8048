//! Client for the external feature extractor.
//!
//! The extractor takes raw image bytes in a POST body and answers with an
//! SFM1 tensor.

use std::time::Duration;

use thiserror::Error;

use matchscope_core::store::SpatialFeatureMap;

#[derive(Debug, Error)]
pub enum ExtractorError {
    #[error("no feature extractor is configured; submit an SFM1 tensor instead")]
    NotConfigured,
    #[error("feature extractor unreachable: {0}")]
    Unreachable(String),
    #[error("feature extractor answered {0}")]
    Status(u16),
    #[error("feature extractor returned an invalid tensor: {0}")]
    InvalidResponse(String),
}

#[derive(Debug, Clone)]
pub struct ExtractorClient {
    url: String,
    retries: u32,
    client: reqwest::Client,
}

impl ExtractorClient {
    pub fn new(url: String, timeout: Duration, retries: u32) -> Result<Self, ExtractorError> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ExtractorError::Unreachable(e.to_string()))?;
        Ok(Self { url, retries, client })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    /// Sends the image, retrying transport failures and 5xx answers.
    pub async fn extract(&self, image: Vec<u8>) -> Result<SpatialFeatureMap, ExtractorError> {
        let mut last = ExtractorError::Unreachable("no attempt made".into());
        for _ in 0..=self.retries {
            let sent = self
                .client
                .post(&self.url)
                .header(reqwest::header::CONTENT_TYPE, "application/octet-stream")
                .body(image.clone())
                .send()
                .await;
            let response = match sent {
                Ok(r) => r,
                Err(e) => {
                    last = ExtractorError::Unreachable(e.to_string());
                    continue;
                }
            };
            let status = response.status();
            if status.is_server_error() {
                last = ExtractorError::Status(status.as_u16());
                continue;
            }
            if !status.is_success() {
                return Err(ExtractorError::Status(status.as_u16()));
            }
            let body = response.bytes().await.map_err(|e| ExtractorError::Unreachable(e.to_string()))?;
            return SpatialFeatureMap::from_sfm1_bytes(&body)
                .map_err(|e| ExtractorError::InvalidResponse(e.to_string()));
        }
        Err(last)
    }
}
