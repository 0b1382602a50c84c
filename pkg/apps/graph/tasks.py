import logging

from celery import shared_task
from celery.exceptions import MaxRetriesExceededError

from apps.core.exceptions import ClientError
from apps.graph.extraction import build_graph, load_documents
from apps.llm.factory import build_client

logger = logging.getLogger(__name__)


@shared_task(bind=True, max_retries=3, default_retry_delay=5)
def build_graph_batch(self, doc_ids, client_mode=None, fixtures=None, cassette=None):
    """
    Extract, annotate and insert one batch of documents (an hour of a day,
    or a whole video). Dedup on insert makes retries safe.
    """
    try:
        client = build_client(client_mode, fixtures=fixtures, cassette=cassette)
        docs = load_documents(doc_ids)
        if len(docs) != len(set(doc_ids)):
            logger.warning(f"Batch asked for {len(set(doc_ids))} documents, found {len(docs)}")

        report = build_graph(docs, client)
        return {
            'success': True,
            'documents': report.documents,
            'inserted': report.inserted,
            'rejected': report.rejected,
            'failures': report.failures,
            'stats': report.stats.to_dict(),
        }

    except ClientError as e:
        # Client configuration errors are not retried
        logger.error(f"Cannot build a model client for batch: {str(e)}")
        return {'success': False, 'error': str(e)}

    except Exception as e:
        logger.error(f"Error building graph batch of {len(doc_ids)} documents: {str(e)}")
        try:
            self.retry(exc=e, countdown=self.request.retries * 60)
        except MaxRetriesExceededError:
            return {'success': False, 'error': f'Max retries exceeded: {str(e)}'}
