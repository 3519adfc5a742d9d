"""Create peers table

Revision ID: 3c1d9e7a5b20
Revises: 
Create Date: 2026-10-19 10:12:41.508113

"""
from typing import Sequence, Union

from alembic import op
import sqlalchemy as sa


# revision identifiers, used by Alembic.
revision: str = '3c1d9e7a5b20'
down_revision: Union[str, None] = None
branch_labels: Union[str, Sequence[str], None] = None
depends_on: Union[str, Sequence[str], None] = None


def upgrade() -> None:
    """Upgrade schema."""
    op.create_table('peers',
    sa.Column('node_id', sa.String(length=64), nullable=False),
    sa.Column('url', sa.String(), nullable=False),
    sa.Column('first_seen', sa.DateTime(), nullable=False),
    sa.Column('last_connection', sa.DateTime(), nullable=True),
    sa.Column('connection_count', sa.Integer(), nullable=False),
    sa.Column('avg_rtt_ms', sa.Float(), nullable=True),
    sa.PrimaryKeyConstraint('node_id')
    )
    op.create_index(op.f('ix_peers_node_id'), 'peers', ['node_id'], unique=False)


def downgrade() -> None:
    """Downgrade schema."""
    op.drop_index(op.f('ix_peers_node_id'), table_name='peers')
    op.drop_table('peers')
