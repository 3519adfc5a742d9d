from datetime import datetime

from sqlalchemy import Column, DateTime, Float, Integer, String

from app.db.database import Base


class Peer(Base):
    __tablename__ = "peers"

    node_id = Column(String(64), primary_key=True, index=True)  # hex public key
    url = Column(String, nullable=False)
    first_seen = Column(DateTime, nullable=False, default=datetime.utcnow)
    last_connection = Column(DateTime, nullable=True)
    connection_count = Column(Integer, nullable=False, default=0)
    avg_rtt_ms = Column(Float, nullable=True)
